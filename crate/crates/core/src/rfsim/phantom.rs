//! Synthetic scatterer phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SpeckleCyst,
    PointTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub depth: f64,
    pub lateral: f64,
    pub amplitude: f64,
}

/// Circular hypoechoic region; amplitudes inside are multiplied by `echogenicity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CystRegion {
    pub depth: f64,
    pub lateral: f64,
    pub radius: f64,
    pub echogenicity: f64,
}

impl CystRegion {
    pub fn contains(&self, depth: f64, lateral: f64) -> bool {
        (depth - self.depth).powi(2) + (lateral - self.lateral).powi(2) <= self.radius * self.radius
    }
}

/// Extent of the phantom and the parameter ranges of its random cysts.
/// Lengths are metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomGeometry {
    pub depth_min: f64,
    pub depth_max: f64,
    /// Lateral extent, centred on zero.
    pub width: f64,
    pub cysts_min: usize,
    pub cysts_max: usize,
    pub cyst_radius_min: f64,
    pub cyst_radius_max: f64,
    pub cyst_echogenicity_min: f64,
    pub cyst_echogenicity_max: f64,
}

impl PhantomGeometry {
    /// Depth window that keeps every echo of a `line_len`-sample line inside
    /// the line, with a 2 mm margin at each end.
    pub fn for_line(line_len: usize, fs: f64, sound_speed: f64, width: f64) -> Self {
        let max_depth = line_len as f64 / fs * sound_speed / 2.0;
        Self {
            depth_min: 2e-3,
            depth_max: max_depth - 2e-3,
            width,
            cysts_min: 1,
            cysts_max: 3,
            cyst_radius_min: 2e-3,
            cyst_radius_max: 5e-3,
            cyst_echogenicity_min: 0.05,
            cyst_echogenicity_max: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_min >= 0.0 && self.depth_max > self.depth_min && self.width > 0.0) {
            return Err(Error::Config(format!("invalid phantom extent {self:?}")));
        }
        if self.cysts_min > self.cysts_max
            || self.cyst_radius_min > self.cyst_radius_max
            || self.cyst_echogenicity_min > self.cyst_echogenicity_max
            || self.cyst_echogenicity_min < 0.0
        {
            return Err(Error::Config(format!("invalid cyst ranges {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub scatterers: Vec<Scatterer>,
    pub cyst_regions: Vec<CystRegion>,
    pub rng_seed: u64,
    pub geometry: PhantomGeometry,
}

/// Rayleigh sample with unit scale parameter, by CDF inversion.
pub fn rayleigh<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Speckle-cyst phantoms draw `n_scatterers` uniform positions with Rayleigh
/// amplitudes, attenuated inside random circular cysts. Point-target phantoms
/// place `n_scatterers` unit scatterers on the centre line, one per row, at
/// evenly spaced depths.
pub fn generate_phantom(
    kind: PhantomKind,
    n_scatterers: usize,
    rng_seed: u64,
    geometry: &PhantomGeometry,
) -> Result<PhantomSpec> {
    if n_scatterers == 0 {
        return Err(Error::Config("a phantom needs at least one scatterer".into()));
    }
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let g = geometry;
    let (scatterers, cyst_regions) = match kind {
        PhantomKind::SpeckleCyst => {
            let n_cysts = rng.gen_range(g.cysts_min..=g.cysts_max);
            let cysts: Vec<CystRegion> = (0..n_cysts)
                .map(|_| {
                    let radius = rng
                        .gen_range(g.cyst_radius_min..=g.cyst_radius_max)
                        .min((g.depth_max - g.depth_min) / 2.0);
                    CystRegion {
                        depth: rng.gen_range(g.depth_min + radius..=g.depth_max - radius),
                        lateral: rng.gen_range(-g.width / 2.0..=g.width / 2.0),
                        radius,
                        echogenicity: rng.gen_range(g.cyst_echogenicity_min..=g.cyst_echogenicity_max),
                    }
                })
                .collect();
            let scatterers = (0..n_scatterers)
                .map(|_| {
                    let depth = rng.gen_range(g.depth_min..g.depth_max);
                    let lateral = rng.gen_range(-g.width / 2.0..g.width / 2.0);
                    let mut amplitude = rayleigh(&mut rng);
                    for c in &cysts {
                        if c.contains(depth, lateral) {
                            amplitude *= c.echogenicity;
                        }
                    }
                    Scatterer {
                        depth,
                        lateral,
                        amplitude,
                    }
                })
                .collect();
            (scatterers, cysts)
        }
        PhantomKind::PointTargets => {
            let step = (g.depth_max - g.depth_min) / (n_scatterers + 1) as f64;
            let scatterers = (1..=n_scatterers)
                .map(|row| Scatterer {
                    depth: g.depth_min + step * row as f64,
                    lateral: 0.0,
                    amplitude: 1.0,
                })
                .collect();
            (scatterers, Vec::new())
        }
    };
    Ok(PhantomSpec {
        kind,
        scatterers,
        cyst_regions,
        rng_seed,
        geometry: *geometry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> PhantomGeometry {
        PhantomGeometry::for_line(1536, 20.832e6, 1540.0, 19.2e-3)
    }

    #[test]
    fn point_targets_are_isolated_rows() {
        let p = generate_phantom(PhantomKind::PointTargets, 5, 1, &geometry()).unwrap();
        assert_eq!(p.scatterers.len(), 5);
        let depths: Vec<f64> = p.scatterers.iter().map(|s| s.depth).collect();
        assert!(depths.windows(2).all(|w| w[1] > w[0]));
        assert!(p.scatterers.iter().all(|s| s.amplitude == 1.0));
    }

    #[test]
    fn zero_scatterers_rejected() {
        assert!(generate_phantom(PhantomKind::SpeckleCyst, 0, 1, &geometry()).is_err());
    }

    #[test]
    fn scatterers_stay_in_window() {
        let g = geometry();
        let p = generate_phantom(PhantomKind::SpeckleCyst, 2000, 9, &g).unwrap();
        for s in &p.scatterers {
            assert!(s.depth >= g.depth_min && s.depth < g.depth_max);
            assert!(s.lateral.abs() <= g.width / 2.0);
            assert!(s.amplitude >= 0.0);
        }
        assert!(!p.cyst_regions.is_empty());
    }

    #[test]
    fn cyst_interiors_are_hypoechoic() {
        let g = geometry();
        let p = generate_phantom(PhantomKind::SpeckleCyst, 20_000, 4, &g).unwrap();
        let mean = |inside: bool| {
            let v: Vec<f64> = p
                .scatterers
                .iter()
                .filter(|s| p.cyst_regions.iter().any(|c| c.contains(s.depth, s.lateral)) == inside)
                .map(|s| s.amplitude)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) < 0.5 * mean(false));
    }

    #[test]
    fn same_seed_same_phantom() {
        let g = geometry();
        let a = generate_phantom(PhantomKind::SpeckleCyst, 500, 77, &g).unwrap();
        let b = generate_phantom(PhantomKind::SpeckleCyst, 500, 77, &g).unwrap();
        let c = generate_phantom(PhantomKind::SpeckleCyst, 500, 78, &g).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rayleigh_amplitudes_pass_ks_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut samples: Vec<f64> = (0..n).map(|_| rayleigh(&mut rng)).collect();
        samples.sort_by(f64::total_cmp);
        let cdf = |x: f64| 1.0 - (-x * x / 2.0).exp();
        let d = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic Kolmogorov critical value at alpha = 0.01
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "D = {d}, critical = {critical}");
    }
}
