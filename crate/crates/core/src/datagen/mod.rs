//! Reference solvers that manufacture training data.

pub mod burgers;
pub mod darcy;
pub mod etdrk4;
pub mod grf;
pub mod ks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Fields, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::fft::check_power_of_two;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pde {
    Ks1d,
    Burgers1d,
    Darcy2d,
}

impl Pde {
    pub fn name(self) -> &'static str {
        match self {
            Pde::Ks1d => "ks1d",
            Pde::Burgers1d => "burgers1d",
            Pde::Darcy2d => "darcy2d",
        }
    }
}

impl std::str::FromStr for Pde {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks1d" | "ks" => Ok(Pde::Ks1d),
            "burgers1d" | "burgers" => Ok(Pde::Burgers1d),
            "darcy2d" | "darcy" => Ok(Pde::Darcy2d),
            _ => Err(Error::Invalid(format!("unknown pde `{s}`"))),
        }
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub pde: Pde,
    pub grid: Vec<usize>,
    /// Periodic domain length (1-D equations).
    pub length: f64,
    pub nu: f64,
    pub dt: f64,
    /// Solver steps between stored snapshots.
    pub stride: usize,
    pub snapshots: usize,
    /// Simulated time discarded before the first snapshot.
    pub burn_in: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Initial condition: harmonics, their decay exponent and the
    /// root-mean-square amplitude.
    pub ic_modes: usize,
    pub ic_decay: f64,
    pub ic_rms: f64,
    /// Coefficient field: spectral decay, length scale and the two values
    /// it is thresholded to.
    pub alpha: f64,
    pub tau: f64,
    pub a_low: f64,
    pub a_high: f64,
    pub cg_max_iter: usize,
    pub train_fraction: f64,
}

impl TrajectorySpec {
    pub fn defaults(pde: Pde) -> Self {
        let base = TrajectorySpec {
            pde,
            grid: vec![256],
            length: 64.0,
            nu: 0.0,
            dt: 0.05,
            stride: 5,
            snapshots: 41,
            burn_in: 50.0,
            trajectories: 20,
            seed: 0,
            ic_modes: 8,
            ic_decay: 0.0,
            ic_rms: 0.5,
            alpha: 2.0,
            tau: 3.0,
            a_low: 3.0,
            a_high: 12.0,
            cg_max_iter: 20_000,
            train_fraction: 0.8,
        };
        match pde {
            Pde::Ks1d => base,
            Pde::Burgers1d => TrajectorySpec {
                grid: vec![128],
                length: 1.0,
                nu: 0.01,
                dt: 1e-3,
                stride: 50,
                snapshots: 6,
                burn_in: 0.0,
                trajectories: 200,
                ic_modes: 6,
                ic_decay: 1.0,
                ic_rms: 0.5,
                ..base
            },
            Pde::Darcy2d => TrajectorySpec {
                grid: vec![64, 64],
                length: 1.0,
                snapshots: 1,
                burn_in: 0.0,
                trajectories: 100,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        let dims = if self.pde == Pde::Darcy2d { 2 } else { 1 };
        if self.grid.len() != dims {
            return bad(format!("{} needs {dims} grid extents, got {:?}", self.pde.name(), self.grid));
        }
        check_power_of_two(&self.grid)?;
        if self.trajectories == 0 {
            return bad("at least one trajectory is required".into());
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train fraction {} outside [0, 1]", self.train_fraction));
        }
        match self.pde {
            Pde::Darcy2d => {
                if !(self.a_low > 0.0 && self.a_high > 0.0) {
                    return bad("coefficient values must be positive".into());
                }
            }
            _ => {
                if !(self.dt > 0.0) || self.stride == 0 || self.snapshots < 2 || !(self.length > 0.0) {
                    return bad("time-dependent data needs dt > 0, stride >= 1, snapshots >= 2, length > 0".into());
                }
                if self.burn_in < 0.0 {
                    return bad("burn-in must be non-negative".into());
                }
                if self.pde == Pde::Burgers1d && !(self.nu > 0.0) {
                    return bad(format!("viscosity must be positive, got {}", self.nu));
                }
            }
        }
        Ok(())
    }

    /// Independent random stream for trajectory `index`.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    fn burn_in_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }
}

/// One trajectory: `snapshots * N` values, or `(a, u)` for Darcy.
pub fn trajectory(spec: &TrajectorySpec, index: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut rng = spec.rng(index);
    match spec.pde {
        Pde::Ks1d | Pde::Burgers1d => {
            let n = spec.grid[0];
            let u0 = grf::field_1d(n, spec.ic_modes, spec.ic_decay, spec.ic_rms, &mut rng);
            let (solver, name) = if spec.pde == Pde::Ks1d {
                (ks::solver(n, spec.length, spec.dt)?, "ks1d")
            } else {
                (burgers::solver(n, spec.length, spec.nu, spec.dt)?, "burgers1d")
            };
            let traj = solver.integrate(name, &u0, spec.burn_in_steps(), spec.stride, spec.snapshots)?;
            Ok((traj, None))
        }
        Pde::Darcy2d => {
            let (n1, n2) = (spec.grid[0], spec.grid[1]);
            if n1 != n2 {
                return Err(Error::Invalid("darcy data needs a square grid".into()));
            }
            let psi = grf::field_2d(n1, n2, spec.alpha, spec.tau, &mut rng)?;
            let a: Vec<f64> = psi.iter().map(|&v| if v >= 0.0 { spec.a_high } else { spec.a_low }).collect();
            let u = darcy::solve_unit_source(n1, &a, spec.cg_max_iter)?;
            Ok((a, Some(u)))
        }
    }
}

/// Generates every trajectory (in parallel; the result does not depend on
/// the thread count) and splits by trajectory index.
pub fn generate(spec: &TrajectorySpec) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let parts: Vec<(Vec<f64>, Option<Vec<f64>>)> =
        (0..spec.trajectories).into_par_iter().map(|i| trajectory(spec, i)).collect::<Result<_>>()?;
    let m = spec.trajectories;
    let fields = match spec.pde {
        Pde::Darcy2d => {
            let mut shape = vec![m, 1];
            shape.extend(&spec.grid);
            let (mut a, mut u) = (Vec::new(), Vec::new());
            for (ai, ui) in parts {
                a.extend(ai);
                u.extend(ui.expect("darcy solution"));
            }
            Fields::Map {
                input: Tensor::from_vec(&shape, a)?,
                output: Tensor::from_vec(&shape, u)?,
            }
        }
        _ => {
            let shape = [m, spec.snapshots, 1, spec.grid[0]];
            Fields::Evolution(Tensor::from_vec(&shape, parts.into_iter().flat_map(|p| p.0).collect())?)
        }
    };
    let mut data = TrajectoryDataset::new(spec.pde.name(), fields, spec.train_fraction, serde_json::to_value(spec)?)?;
    if spec.pde == Pde::Darcy2d {
        data.input_names = vec!["a".into()];
        data.output_names = vec!["u".into()];
    }
    if !data.is_finite() {
        return Err(Error::Dataset("generated fields are not finite".into()));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pde: Pde) -> TrajectorySpec {
        let mut s = TrajectorySpec::defaults(pde);
        s.trajectories = 3;
        match pde {
            Pde::Ks1d => {
                s.grid = vec![64];
                s.burn_in = 5.0;
                s.snapshots = 4;
            }
            Pde::Burgers1d => s.grid = vec![64],
            Pde::Darcy2d => s.grid = vec![16, 16],
        }
        s
    }

    #[test]
    fn generation_is_seed_deterministic_and_finite() {
        for pde in [Pde::Ks1d, Pde::Burgers1d, Pde::Darcy2d] {
            let spec = small(pde);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b);
            assert!(a.is_finite());
            let other = generate(&TrajectorySpec { seed: 1, ..spec.clone() }).unwrap();
            assert_ne!(a.fields, other.fields);
        }
    }

    #[test]
    fn trajectories_are_independent_of_their_neighbours() {
        let spec = small(Pde::Burgers1d);
        let one = trajectory(&spec, 2).unwrap();
        let all = generate(&spec).unwrap();
        assert_eq!(all.frame(2, 0), &one.0[..64]);
    }

    #[test]
    fn darcy_shapes_and_split() {
        let d = generate(&TrajectorySpec { trajectories: 5, ..small(Pde::Darcy2d) }).unwrap();
        assert!(d.is_map());
        assert_eq!(d.grid(), &[16, 16]);
        assert_eq!(d.split.iter().filter(|s| **s == crate::data::Split::Train).count(), 4);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(Pde::Ks1d);
        s.grid = vec![100];
        assert!(generate(&s).is_err());
        let mut s = small(Pde::Burgers1d);
        s.nu = 0.0;
        assert!(s.validate().is_err());
        let mut s = small(Pde::Ks1d);
        s.stride = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn blowup_is_reported_with_step() {
        // far too large a step for this amplitude
        let mut s = small(Pde::Burgers1d);
        s.ic_rms = 1e6;
        s.dt = 10.0;
        s.stride = 50;
        match generate(&s) {
            Err(Error::Blowup { solver, step }) => {
                assert_eq!(solver, "burgers1d");
                assert!(step >= 1);
            }
            other => panic!("{other:?}"),
        }
    }
}
