//! The scenario document: one JSON file holding the full problem instance.

use std::path::Path;
use std::sync::Arc as Shared;

use serde::{Deserialize, Serialize};

use crate::arcs::{default_feasibility_tol, TimeGrid};
use crate::bestresponse::BestResponseConfig;
use crate::costs::{
    ConvolutionCoupling, CostModel, Coupling, DiracDistance, Lagrangian, LagrangianConstants, Profile, Quadratic,
    Speed, SquaredDistance, Tilted, WendlandKernel, ZeroCoupling,
};
use crate::equilibrium::{Damping, Game, Initialization, SolverConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{BoundingBox, Domain, Ellipsoid};
use crate::measures::SpatialMeasure;
use crate::mildsolution::DEFAULT_GRID_PER_DIM;

pub const SCENARIO_VERSION: u32 = 1;

/// Initial atoms must sum to one within this.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64, tube_radius: f64 },
    Superellipse { center: [f64; 2], semi_axes: [f64; 2], tube_radius: f64 },
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64>, tube_radius: f64 },
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        match self {
            Self::Ball { center, radius, tube_radius } => Domain::ball(center.clone(), *radius, *tube_radius),
            Self::Superellipse { center, semi_axes, tube_radius } => {
                Domain::superellipse(*center, *semi_axes, *tube_radius)
            }
            Self::Ellipsoid { center, semi_axes, tube_radius } => {
                if center.len() != semi_axes.len() || semi_axes.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::InvalidConfig("ellipsoid needs one positive semi-axis per coordinate".into()));
                }
                let bbox = BoundingBox {
                    lo: center.iter().zip(semi_axes).map(|(c, a)| c - a).collect(),
                    hi: center.iter().zip(semi_axes).map(|(c, a)| c + a).collect(),
                };
                let f = Ellipsoid { center: center.clone(), semi_axes: semi_axes.clone() };
                Domain::level_set(Shared::new(f), bbox, *tube_radius)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagrangianSpec {
    /// `scale |v|^2`; constants default to the tight ones.
    Quadratic {
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constants: Option<LagrangianConstants>,
    },
    Speed {
        constants: LagrangianConstants,
    },
    Tilted {
        strength: f64,
        constants: LagrangianConstants,
    },
}

impl LagrangianSpec {
    pub fn build(&self) -> Result<Shared<dyn Lagrangian>> {
        let check = |c: &LagrangianConstants| {
            if [c.growth, c.c0, c.c1].iter().any(|v| !v.is_finite() || *v < 0.0) || !(c.c1 > 0.0) {
                Err(Error::InvalidConfig("Lagrangian constants must be finite, nonnegative, with c1 > 0".into()))
            } else {
                Ok(())
            }
        };
        Ok(match self {
            Self::Quadratic { scale, constants } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidConfig(format!("quadratic scale must be positive, got {scale}")));
                }
                let mut l = Quadratic::new(*scale);
                if let Some(c) = constants {
                    check(c)?;
                    l = l.with_constants(*c);
                }
                Shared::new(l)
            }
            Self::Speed { constants } => {
                check(constants)?;
                Shared::new(Speed { constants: *constants })
            }
            Self::Tilted { strength, constants } => {
                check(constants)?;
                Shared::new(Tilted { strength: *strength, constants: *constants })
            }
        })
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    Zero,
    /// `scale |x - target|^2`.
    SquaredDistance {
        target: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale d_1(m, delta_center) |x - center|`.
    DiracDistance {
        center: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Crowd aversion through a Wendland kernel and a linear density profile.
    Convolution {
        kernel_radius: f64,
        slope: f64,
        cells: usize,
    },
}

impl CouplingSpec {
    pub fn build(&self, domain: &Domain) -> Result<Shared<dyn Coupling>> {
        let dim_check = |p: &[f64]| {
            if p.len() == domain.dim() {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: domain.dim(), got: p.len() })
            }
        };
        Ok(match self {
            Self::Zero => Shared::new(ZeroCoupling),
            Self::SquaredDistance { target, scale } => {
                dim_check(target)?;
                Shared::new(SquaredDistance { target: target.clone(), scale: *scale })
            }
            Self::DiracDistance { center, scale } => {
                dim_check(center)?;
                Shared::new(DiracDistance { center: center.clone(), scale: *scale })
            }
            Self::Convolution { kernel_radius, slope, cells } => Shared::new(ConvolutionCoupling::new(
                domain,
                WendlandKernel::new(*kernel_radius)?,
                Profile::Linear { slope: *slope },
                *cells,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Fictitious-play settings; the seed lives at the top level of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub max_outer_iters: usize,
    pub exploitability_tol: f64,
    pub damping: Damping,
    pub split_ties: bool,
    pub initialization: Initialization,
    pub execution: Execution,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_outer_iters: d.max_outer_iters,
            exploitability_tol: d.exploitability_tol,
            damping: d.damping,
            split_ties: d.split_ties,
            initialization: d.initialization,
            execution: d.execution,
        }
    }
}

impl SolverSpec {
    pub fn config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            max_outer_iters: self.max_outer_iters,
            exploitability_tol: self.exploitability_tol,
            damping: self.damping,
            split_ties: self.split_ties,
            seed,
            initialization: self.initialization,
            execution: self.execution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueGridSpec {
    pub per_dim: usize,
}

impl Default for ValueGridSpec {
    fn default() -> Self {
        Self { per_dim: DEFAULT_GRID_PER_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub domain: DomainSpec,
    pub lagrangian: LagrangianSpec,
    pub running: CouplingSpec,
    pub terminal: CouplingSpec,
    pub initial: Vec<AtomSpec>,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub value_grid: ValueGridSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub best_response: BestResponseConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A validated scenario ready to solve.
#[derive(Debug, Clone)]
pub struct Instance {
    pub game: Game,
    pub solver: SolverConfig,
    pub best_response: BestResponseConfig,
    pub value_grid_per_dim: usize,
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Scenario { .. } => e,
        other => Error::Scenario { path: path.into(), message: other.to_string() },
    }
}

impl Scenario {
    /// Parses a scenario; schema errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Scenario { path, message: e.into_inner().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario {
            path: ".".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates every field and builds the game.
    pub fn instance(&self) -> Result<Instance> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Scenario {
                path: "version".into(),
                message: format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version),
            });
        }
        let domain = self.domain.build().map_err(at("domain"))?;
        let lagrangian = self.lagrangian.build().map_err(at("lagrangian"))?;
        let running = self.running.build(&domain).map_err(at("running"))?;
        let terminal = self.terminal.build(&domain).map_err(at("terminal"))?;
        let grid = TimeGrid::new(self.horizon, self.steps).map_err(at("horizon"))?;
        let initial = self.initial_measure(&domain)?;
        let solver = self.solver.config(self.seed);
        solver.validate().map_err(at("solver"))?;
        self.best_response.validate().map_err(at("best_response"))?;
        if self.value_grid.per_dim < 2 {
            return Err(Error::Scenario { path: "value_grid.per_dim".into(), message: "must be at least 2".into() });
        }
        let game =
            Game::new(domain, CostModel::new(lagrangian, running, terminal), initial, grid).map_err(at("initial"))?;
        Ok(Instance {
            game,
            solver,
            best_response: self.best_response.clone(),
            value_grid_per_dim: self.value_grid.per_dim,
        })
    }

    fn initial_measure(&self, domain: &Domain) -> Result<SpatialMeasure> {
        if self.initial.is_empty() {
            return Err(Error::Scenario { path: "initial".into(), message: "needs at least one atom".into() });
        }
        let tol = default_feasibility_tol(domain);
        for (i, a) in self.initial.iter().enumerate() {
            let path = format!("initial[{i}]");
            if a.point.len() != domain.dim() {
                return Err(Error::Scenario {
                    path: format!("{path}.point"),
                    message: format!("atom {i} has {} coordinates, domain has {}", a.point.len(), domain.dim()),
                });
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::Scenario {
                    path: format!("{path}.weight"),
                    message: format!("atom {i} has non-positive weight {}", a.weight),
                });
            }
            let outside = match domain.signed_distance(&a.point) {
                Ok(b) => (b > tol).then(|| format!("signed distance {b:e}")),
                Err(e) => Some(e.to_string()),
            };
            if let Some(why) = outside {
                return Err(Error::Scenario {
                    path: format!("{path}.point"),
                    message: format!("atom {i} lies outside the domain ({why})"),
                });
            }
        }
        let total: f64 = self.initial.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Scenario { path: "initial".into(), message: format!("weights sum to {total}, not 1") });
        }
        let atoms: Vec<(Vec<f64>, f64)> = self.initial.iter().map(|a| (a.point.clone(), a.weight)).collect();
        SpatialMeasure::from_atoms(&atoms).map_err(at("initial"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "domain": {"type": "ball", "center": [0, 0], "radius": 1, "tube_radius": 0.5},
        "lagrangian": {"type": "quadratic", "scale": 1},
        "running": {"type": "zero"},
        "terminal": {"type": "zero"},
        "initial": [{"point": [0.1, 0.2], "weight": 0.5}, {"point": [-0.3, 0], "weight": 0.5}],
        "horizon": 1,
        "steps": 8
    }"#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.value_grid.per_dim, DEFAULT_GRID_PER_DIM);
        assert_eq!(s.best_response, BestResponseConfig::default());
        let inst = s.instance().unwrap();
        assert_eq!(inst.game.initial.len(), 2);
        assert_eq!(inst.solver.seed, 0);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = MINIMAL.replace(r#""type": "zero"}"#, r#""type": "nope"}"#);
        match Scenario::from_json(&bad) {
            Err(Error::Scenario { path, .. }) => assert_eq!(path, "running.type"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace(r#""steps": 8"#, r#""steps": 8, "extra": 1"#);
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Scenario { .. })));
        let bad = MINIMAL.replace(r#""radius": 1,"#, r#""radius": "one","#);
        match Scenario::from_json(&bad) {
            Err(Error::Scenario { path, message }) => {
                assert_eq!(path, "domain");
                assert!(message.contains("one"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atom_outside_the_domain_is_named() {
        let bad = MINIMAL.replace("[-0.3, 0]", "[1.3, 0]");
        let err = Scenario::from_json(&bad).unwrap().instance().unwrap_err();
        match &err {
            Error::Scenario { path, message } => {
                assert_eq!(path, "initial[1].point");
                assert!(message.contains("atom 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unnormalized_weights_are_rejected() {
        let bad = MINIMAL.replace(r#""weight": 0.5}]"#, r#""weight": 0.6}]"#);
        assert!(matches!(Scenario::from_json(&bad).unwrap().instance(), Err(Error::Scenario { .. })));
    }
}
