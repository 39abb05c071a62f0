//! CSV and JSON encodings of measures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArcMeasure, SpatialMeasure};
use crate::arcs::{Arc, TimeGrid};
use crate::error::{Error, Result};

/// Writes one row `x1,...,xn,weight` per atom, with a header.
pub fn write_spatial_csv<W: Write>(m: &SpatialMeasure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.push("weight".into());
    w.write_record(&header)?;
    for (p, weight) in m.atoms() {
        let row: Vec<String> = p.iter().chain([&weight]).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spatial_csv<R: std::io::Read>(input: R) -> Result<SpatialMeasure> {
    let mut r = csv::Reader::from_reader(input);
    let dim = r
        .headers()?
        .len()
        .checked_sub(1)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::ShapeMismatch("measure CSV needs coordinate columns and a weight column".into()))?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidMeasure(format!("bad number in measure CSV: {e}")))?;
        points.extend_from_slice(&vals[..dim]);
        weights.push(vals[dim]);
    }
    SpatialMeasure::new(dim, points, weights)
}

/// Writes the flow as rows `k,t,x1,...,xn,weight`, one per atom and node.
pub fn write_flow_csv<W: Write>(flow: &[SpatialMeasure], grid: &TimeGrid, out: W) -> Result<()> {
    if flow.len() != grid.num_nodes() {
        return Err(Error::GridMismatch(format!("{} snapshots for {} nodes", flow.len(), grid.num_nodes())));
    }
    let dim = flow.first().map_or(0, SpatialMeasure::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("weight".into());
    w.write_record(&header)?;
    for (k, m) in flow.iter().enumerate() {
        for (p, weight) in m.atoms() {
            let mut row = vec![k.to_string(), grid.time(k).to_string()];
            row.extend(p.iter().chain([&weight]).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a flow written by [`write_flow_csv`]; snapshots are returned in node order.
pub fn read_flow_csv<R: std::io::Read>(input: R) -> Result<Vec<SpatialMeasure>> {
    let mut r = csv::Reader::from_reader(input);
    let dim = r
        .headers()?
        .len()
        .checked_sub(3)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::ShapeMismatch("flow CSV needs k, t, coordinate and weight columns".into()))?;
    let mut nodes: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |e: String| Error::InvalidMeasure(format!("bad entry in flow CSV: {e}"));
        let k: usize = rec[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        if k > nodes.len() {
            return Err(Error::ShapeMismatch(format!("flow CSV skips node {}", nodes.len())));
        }
        if k == nodes.len() {
            nodes.push((Vec::new(), Vec::new()));
        }
        nodes[k].0.extend_from_slice(&vals[..dim]);
        nodes[k].1.push(vals[dim]);
    }
    nodes.into_iter().map(|(p, w)| SpatialMeasure::new(dim, p, w)).collect()
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    point: Vec<f64>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ArcRecord {
    weight: f64,
    /// Node positions, one row per grid node.
    nodes: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ArcMeasureRecord {
    horizon: f64,
    steps: usize,
    dim: usize,
    initial: Vec<AtomRecord>,
    arcs: Vec<ArcRecord>,
}

pub fn write_arc_measure_json(eta: &ArcMeasure, path: &Path) -> Result<()> {
    let rec = ArcMeasureRecord {
        horizon: eta.grid().horizon(),
        steps: eta.grid().steps(),
        dim: eta.dim(),
        initial: eta.initial().atoms().map(|(p, w)| AtomRecord { point: p.to_vec(), weight: w }).collect(),
        arcs: eta
            .atoms()
            .map(|(a, w)| ArcRecord { weight: w, nodes: a.coords().chunks(a.dim()).map(<[f64]>::to_vec).collect() })
            .collect(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &rec)?;
    out.flush()?;
    Ok(())
}

/// Reads an arc measure; unit mass and the initial marginal are not enforced.
pub fn read_arc_measure_json(path: &Path) -> Result<ArcMeasure> {
    let rec: ArcMeasureRecord = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let grid = TimeGrid::new(rec.horizon, rec.steps)?;
    let atoms: Vec<(Vec<f64>, f64)> = rec.initial.into_iter().map(|a| (a.point, a.weight)).collect();
    let initial = SpatialMeasure::from_atoms(&atoms)?;
    let mut arcs = Vec::with_capacity(rec.arcs.len());
    let mut weights = Vec::with_capacity(rec.arcs.len());
    for a in rec.arcs {
        if a.nodes.iter().any(|n| n.len() != rec.dim) {
            return Err(Error::DimensionMismatch { expected: rec.dim, got: 0 });
        }
        arcs.push(Arc::new(grid, rec.dim, a.nodes.concat())?);
        weights.push(a.weight);
    }
    ArcMeasure::from_parts(arcs, weights, initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_csv_round_trip_is_exact() {
        let m = SpatialMeasure::new(2, vec![0.1, -1.0 / 3.0, 2.0f64.sqrt() / 7.0, 0.0], vec![0.3, 0.7]).unwrap();
        let mut buf = Vec::new();
        write_spatial_csv(&m, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x1,x2,weight\n"));
        assert_eq!(read_spatial_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn flow_csv_round_trip_is_exact() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let flow = vec![
            SpatialMeasure::dirac(&[0.1, 0.2]).unwrap(),
            SpatialMeasure::new(2, vec![0.0, 0.1, 1.0 / 3.0, -0.2], vec![0.25, 0.75]).unwrap(),
            SpatialMeasure::dirac(&[-0.5, 0.0]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_flow_csv(&flow, &grid, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("k,t,x1,x2,weight\n"));
        assert_eq!(read_flow_csv(buf.as_slice()).unwrap(), flow);
    }

    #[test]
    fn arc_measure_json_round_trip_is_exact() {
        let grid = TimeGrid::new(0.7, 3).unwrap();
        let m0 = SpatialMeasure::from_atoms(&[(vec![0.1, 0.2], 0.4), (vec![-0.3, 0.0], 0.6)]).unwrap();
        let arcs = vec![Arc::straight_line(grid, &[0.1, 0.2], &[0.5, 1.0 / 3.0]), Arc::constant(grid, &[-0.3, 0.0])];
        let eta = ArcMeasure::new(arcs, vec![0.4, 0.6], m0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.json");
        write_arc_measure_json(&eta, &path).unwrap();
        let back = read_arc_measure_json(&path).unwrap();
        assert_eq!(back.arcs(), eta.arcs());
        assert_eq!(back.weights(), eta.weights());
        assert_eq!(back.initial(), eta.initial());
    }
}
