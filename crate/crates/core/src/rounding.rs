//! The induced mixed-scale density `f = g(f*)` and the rounding pushforward.
//!
//! For a Gaussian component the integral over the discrete-block cell
//! factors exactly into the continuous-block marginal density at the latent
//! continuous values times the box probability of the conditional law of the
//! discrete block. Evaluating `f` therefore never needs generic cubature.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{BoxSettings, Conditioner, GaussianComponent};
use crate::mixture::LatentMixture;
use crate::normal::{self, log_sum_exp};
use crate::rng::{mix, substream};
use crate::schema::{cell_of, latent_of_continuous, Cell, Levels, MixedPoint, MixedSchema, SchemaFile};

/// Per-component pieces reused across evaluations.
#[derive(Debug, Clone)]
enum Blocks {
    ContinuousOnly,
    DiscreteOnly,
    Mixed(Conditioner),
}

#[derive(Debug, Clone)]
struct ComponentBlocks {
    blocks: Blocks,
    /// marginal of the discrete block (absent when p2 = 0)
    discrete_marginal: Option<GaussianComponent>,
}

/// A log-density value with the absolute error of the density it came from,
/// relative to the density (0 for closed-form box probabilities).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub ln_density: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct MixedDensity {
    schema: MixedSchema,
    latent: LatentMixture,
    box_settings: BoxSettings,
    seed: u64,
    parts: Vec<ComponentBlocks>,
}

impl MixedDensity {
    pub fn new(schema: MixedSchema, latent: LatentMixture) -> Result<Self> {
        Self::with_settings(schema, latent, BoxSettings::default(), 0)
    }

    pub fn with_settings(
        schema: MixedSchema,
        latent: LatentMixture,
        box_settings: BoxSettings,
        seed: u64,
    ) -> Result<Self> {
        if latent.dim() != schema.p() {
            return Err(Error::Dimension {
                expected: schema.p(),
                got: latent.dim(),
            });
        }
        let (p1, p) = (schema.p1(), schema.p());
        let cont_idx: Vec<usize> = (0..p1).collect();
        let disc_idx: Vec<usize> = (p1..p).collect();
        let parts = latent
            .components()
            .iter()
            .map(|c| {
                let blocks = if schema.p2() == 0 {
                    Blocks::ContinuousOnly
                } else if p1 == 0 {
                    Blocks::DiscreteOnly
                } else {
                    Blocks::Mixed(Conditioner::new(c, &cont_idx)?)
                };
                let discrete_marginal = if schema.p2() == 0 {
                    None
                } else if p1 == 0 {
                    Some(c.clone())
                } else {
                    Some(c.marginal(&disc_idx)?)
                };
                Ok(ComponentBlocks {
                    blocks,
                    discrete_marginal,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedDensity {
            schema,
            latent,
            box_settings,
            seed,
            parts,
        })
    }

    pub fn schema(&self) -> &MixedSchema {
        &self.schema
    }

    pub fn latent(&self) -> &LatentMixture {
        &self.latent
    }

    pub fn box_settings(&self) -> &BoxSettings {
        &self.box_settings
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn cell_key(y2: &[u64]) -> u64 {
        mix(0x6365_6c6c, y2)
    }

    /// `log f(y)`.
    pub fn log_density(&self, y: &MixedPoint) -> Result<f64> {
        Ok(self.evaluate(y)?.ln_density)
    }

    /// `log f(y)` with the relative error carried over from box probabilities.
    pub fn evaluate(&self, y: &MixedPoint) -> Result<Evaluation> {
        self.schema.check_point(y)?;
        let (y1_latent, log_jacobian) = latent_of_continuous(&self.schema, &y.y1)?;
        let mut e = self.evaluate_latent(&y1_latent, &y.y2)?;
        e.ln_density += log_jacobian;
        Ok(e)
    }

    /// Like [`Self::evaluate`] but with the continuous block given in latent
    /// coordinates and no Jacobian factor.
    pub fn evaluate_latent(&self, y1_latent: &[f64], y2: &[u64]) -> Result<Evaluation> {
        if y1_latent.len() != self.schema.p1() {
            return Err(Error::Dimension {
                expected: self.schema.p1(),
                got: y1_latent.len(),
            });
        }
        let cell = if self.schema.p2() > 0 {
            Some(cell_of(&self.schema, y2)?)
        } else {
            None
        };
        self.eval_in_cell(y1_latent, cell.as_ref(), Self::cell_key(y2))
    }

    fn eval_in_cell(&self, y1_latent: &[f64], cell: Option<&Cell>, key: u64) -> Result<Evaluation> {
        let mut terms = Vec::with_capacity(self.latent.len());
        let mut abs_err = Vec::with_capacity(self.latent.len());
        for (k, ((&w, comp), part)) in self
            .latent
            .weights()
            .iter()
            .zip(self.latent.components())
            .zip(&self.parts)
            .enumerate()
        {
            if w <= 0.0 {
                continue;
            }
            let (ln_cont, ln_box, se) = match (&part.blocks, cell) {
                (Blocks::ContinuousOnly, _) => (comp.log_density_unchecked(y1_latent), 0.0, 0.0),
                (Blocks::DiscreteOnly, Some(cell)) => {
                    let mut rng = substream(self.seed, &[key, k as u64]);
                    let b = comp.box_probability_with(cell, &self.box_settings, &mut rng)?;
                    (0.0, b.ln_probability, b.std_error)
                }
                (Blocks::Mixed(cond), Some(cell)) => {
                    let ln_cont = cond.observed_marginal().log_density_unchecked(y1_latent);
                    let conditional = cond.conditional(y1_latent)?;
                    let mut rng = substream(self.seed, &[key, k as u64]);
                    let b = conditional.box_probability_with(cell, &self.box_settings, &mut rng)?;
                    (ln_cont, b.ln_probability, b.std_error)
                }
                _ => unreachable!("cell exists whenever p2 > 0"),
            };
            let ln_w = w.ln();
            terms.push(ln_w + ln_cont + ln_box);
            abs_err.push(ln_w + ln_cont + se.ln());
        }
        let ln_f = log_sum_exp(&terms);
        let ln_err = log_sum_exp(&abs_err);
        let rel_error = if ln_f == f64::NEG_INFINITY {
            if ln_err == f64::NEG_INFINITY {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (ln_err - ln_f).exp()
        };
        Ok(Evaluation {
            ln_density: ln_f,
            rel_error,
        })
    }

    /// Probability of the discrete outcome `y2`, continuous block integrated out.
    pub fn discrete_marginal(&self, y2: &[u64]) -> Result<f64> {
        if self.schema.p2() == 0 {
            return Ok(1.0);
        }
        let cell = cell_of(&self.schema, y2)?;
        let key = Self::cell_key(y2);
        let mut total = 0.0;
        for (k, (&w, part)) in self.latent.weights().iter().zip(&self.parts).enumerate() {
            if w <= 0.0 {
                continue;
            }
            let marg = part.discrete_marginal.as_ref().expect("p2 > 0");
            let mut rng = substream(self.seed, &[key, k as u64, 1]);
            total += w * marg.box_probability_with(&cell, &self.box_settings, &mut rng)?.probability;
        }
        Ok(total)
    }

    /// `n` draws of `y = h(y*)` with `y*` from the latent mixture.
    pub fn pushforward_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<MixedPoint> {
        (0..n)
            .map(|_| self.schema.round(&self.latent.sample_one(rng)))
            .collect()
    }

    /// Largest count level `M` kept for discrete coordinate `j` such that
    /// the latent mass above level `M` is below `tol`.
    pub fn count_bound(&self, j: usize, tol: f64) -> u64 {
        let d = &self.schema.discrete()[j];
        if let Levels::Finite(q) = d.levels {
            return q - 1;
        }
        let idx = self.schema.p1() + j;
        let moments: Vec<(f64, f64, f64)> = self
            .latent
            .weights()
            .iter()
            .zip(self.latent.components())
            .filter(|(w, _)| **w > 0.0)
            .map(|(&w, c)| (w, c.mean()[idx], c.cov()[(idx, idx)].sqrt()))
            .collect();
        let omitted = |m: u64| -> f64 {
            let t = d.partition.upper(m);
            moments
                .iter()
                .map(|&(w, mu, sd)| w * normal::sf((t - mu) / sd))
                .sum()
        };
        // exponential search then bisection on the monotone tail mass
        let mut hi = 1u64;
        while omitted(hi) >= tol {
            hi = hi.saturating_mul(2);
            if hi > 1 << 40 {
                break;
            }
        }
        let mut lo = 0u64;
        if omitted(0) < tol {
            return 0;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if omitted(mid) < tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Per-coordinate level bounds used by [`Self::discrete_support_enumeration`].
    pub fn support_bounds(&self, tail_mass_tol: f64) -> Vec<u64> {
        let p2 = self.schema.p2();
        (0..p2)
            .map(|j| self.count_bound(j, tail_mass_tol / p2 as f64))
            .collect()
    }

    /// All discrete outcomes, with unbounded count coordinates cut where the
    /// omitted mass of `f` stays below `tail_mass_tol`.
    pub fn discrete_support_enumeration(&self, tail_mass_tol: f64) -> Result<Vec<Vec<u64>>> {
        if !(tail_mass_tol > 0.0 && tail_mass_tol <= 0.01) {
            return Err(Error::Precondition(
                "tail mass tolerance must lie in (0, 0.01]".into(),
            ));
        }
        Ok(enumerate_outcomes(&self.support_bounds(tail_mass_tol)))
    }

    /// Per continuous coordinate, a latent-space interval holding `sds`
    /// standard deviations around every component with weight at least
    /// `min_weight`, plus quadrature breakpoints.
    pub fn continuous_latent_box(&self, sds: f64, min_weight: f64) -> Vec<(f64, f64, Vec<f64>)> {
        latent_box(&self.latent, self.schema.p1(), sds, min_weight)
    }

    /// Writes one CSV row per (grid point, outcome).
    pub fn write_density_grid<W: Write>(
        &self,
        y1_points: &[Vec<f64>],
        outcomes: &[Vec<u64>],
        out: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self
            .schema
            .continuous()
            .iter()
            .map(|c| c.name.clone())
            .collect();
        header.extend(self.schema.discrete().iter().map(|d| d.name.clone()));
        header.push("log_density".into());
        header.push("density".into());
        w.write_record(&header)?;
        let empty = vec![Vec::new()];
        let points = if self.schema.p1() == 0 { &empty[..] } else { y1_points };
        for y1 in points {
            for y2 in outcomes {
                let lf = self.log_density(&MixedPoint::new(y1.clone(), y2.clone()))?;
                let mut rec: Vec<String> = y1.iter().map(|v| format!("{v}")).collect();
                rec.extend(y2.iter().map(|v| v.to_string()));
                rec.push(format!("{lf:.12e}"));
                rec.push(format!("{:.12e}", lf.exp()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Density file: the schema columns plus the latent mixture line.
    pub fn to_toml_string(&self) -> String {
        let file = DensityFile {
            column: self.schema.to_file().column,
            latent: LatentSection {
                mixture: self.latent.to_line(),
            },
            integration: Some(IntegrationSection {
                accuracy: self.box_settings.accuracy,
                max_points: self.box_settings.max_points,
                seed: self.seed,
            }),
        };
        toml::to_string(&file).expect("density serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: DensityFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let schema = MixedSchema::from_file(SchemaFile {
            column: file.column,
        })?;
        let latent = LatentMixture::from_line(&file.latent.mixture)?;
        let (settings, seed) = match file.integration {
            Some(i) => (
                BoxSettings {
                    accuracy: i.accuracy,
                    max_points: i.max_points,
                    ..BoxSettings::default()
                },
                i.seed,
            ),
            None => (BoxSettings::default(), 0),
        };
        Self::with_settings(schema, latent, settings, seed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityFile {
    column: Vec<crate::schema::ColumnEntry>,
    latent: LatentSection,
    #[serde(default)]
    integration: Option<IntegrationSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LatentSection {
    mixture: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IntegrationSection {
    accuracy: f64,
    max_points: usize,
    seed: u64,
}

pub(crate) fn latent_box(
    latent: &LatentMixture,
    p1: usize,
    sds: f64,
    min_weight: f64,
) -> Vec<(f64, f64, Vec<f64>)> {
    // breakpoints come from the heaviest components only, plus an even grid;
    // adaptive refinement finds the rest
    const MAX_BREAK_COMPONENTS: usize = 12;
    const FULL_BREAK_COMPONENTS: usize = 4;
    const GRID: usize = 12;
    let mut order: Vec<usize> = (0..latent.len()).collect();
    order.sort_by(|&a, &b| latent.weights()[b].total_cmp(&latent.weights()[a]));
    (0..p1)
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut breaks = Vec::new();
            for (rank, &k) in order.iter().enumerate() {
                let (w, c) = (latent.weights()[k], &latent.components()[k]);
                if w < min_weight {
                    continue;
                }
                let m = c.mean()[j];
                let s = c.cov()[(j, j)].sqrt();
                lo = lo.min(m - sds * s);
                hi = hi.max(m + sds * s);
                if rank < FULL_BREAK_COMPONENTS {
                    breaks.extend([-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0].map(|k| m + k * s));
                } else if rank < MAX_BREAK_COMPONENTS {
                    breaks.extend([-2.0, 0.0, 2.0].map(|k| m + k * s));
                }
            }
            if latent.len() > MAX_BREAK_COMPONENTS {
                breaks.extend((1..GRID).map(|i| lo + (hi - lo) * i as f64 / GRID as f64));
            }
            (lo, hi, breaks)
        })
        .collect()
}

/// Cartesian product of `0..=bounds[j]`.
pub fn enumerate_outcomes(bounds: &[u64]) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for &b in bounds {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=b).map(move |v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out
}

/// The discrete-block cell of `y2` for external callers working in latent
/// coordinates.
pub fn outcome_cell(schema: &MixedSchema, y2: &[u64]) -> Result<Cell> {
    cell_of(schema, y2)
}
