//! Run configuration: a flat JSON document, CLI-overridable, hashed into
//! every output file header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classes::{sample_member_on_grid, ClassSpec};
use crate::error::{Error, Result};
use crate::grid::{BoundsSpec, GridDensity};
use crate::mc::{DepthPolicy, EstimatorConfig};
use crate::seeding::{stream, Domain};
use crate::sieve::minimal_scale;

/// Class selection for a run. Mirrors [`ClassSpec`], with one extra variant
/// that samples mixture components from the ambient bounds and the master
/// seed, so a config file never has to embed component vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ConfigClass {
    Ambient,
    Lipschitz {
        gamma: f64,
        #[serde(with = "crate::classes::q_serde")]
        q: f64,
        psi: f64,
    },
    Bv { zeta: f64 },
    Quad { gamma: f64 },
    ConvMix { k: usize, components: Vec<GridDensity> },
    ConvMixSampled { k: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub class: ConfigClass,
    pub bounds: BoundsSpec,
    /// Local-entropy scale `c = 2(C+1)`; validated against the threshold at load.
    pub c: f64,
    /// Grid cell count.
    pub m: usize,
    /// Broad samples in candidate pools.
    pub pool_size: usize,
    /// Multiscale contraction shells toward the sweep focus.
    pub shells: usize,
    pub per_shell: usize,
    /// Centers used for local-entropy sups and theorem-depth solving.
    pub center_count: usize,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub j_cap: usize,
    /// "fixed" (descend j_cap levels) or "theorem" (solve the depth condition).
    pub depth_policy: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Radius-convention knob for the depth condition and adaptive gate.
    pub radius_multiplier: f64,
    /// 0 = all cores, 1 = sequential.
    pub threads: usize,
    pub adaptive: bool,
    pub packing_budget: usize,
    /// Epsilon grid for entropy sweeps; empty means auto (log-spaced).
    pub eps_grid: Vec<f64>,
    /// Sizes for the verification suites.
    pub verify_pairs: usize,
    pub verify_log_grid: usize,
    pub verify_combos: usize,
    pub verify_contractions: usize,
    pub verify_sieve_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            class: ConfigClass::Bv { zeta: 1.5 },
            bounds: BoundsSpec {
                alpha: 0.5,
                beta: 2.0,
            },
            c: 14.0,
            m: 64,
            pool_size: 96,
            shells: 7,
            per_shell: 16,
            center_count: 32,
            n_list: vec![250, 1000, 4000, 16000],
            replicates: 200,
            j_cap: 12,
            depth_policy: "fixed".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            radius_multiplier: 1.0,
            threads: 0,
            adaptive: false,
            packing_budget: 1 << 20,
            eps_grid: Vec::new(),
            verify_pairs: 10_000,
            verify_log_grid: 100_000,
            verify_combos: 1_000,
            verify_contractions: 100,
            verify_sieve_runs: 500,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        Ok(config)
    }

    /// Check counts, the depth policy, and the scale threshold.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > 1 << 16 {
            return Err(Error::Config(format!(
                "grid size m must lie in [1, 65536], got {}",
                self.m
            )));
        }
        for (name, v) in [
            ("pool_size", self.pool_size),
            ("replicates", self.replicates),
            ("j_cap", self.j_cap),
            ("center_count", self.center_count),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n == 0) {
            return Err(Error::Config("n_list must hold positive sample sizes".into()));
        }
        if !matches!(self.depth_policy.as_str(), "fixed" | "theorem") {
            return Err(Error::Config(format!(
                "depth_policy must be \"fixed\" or \"theorem\", got {:?}",
                self.depth_policy
            )));
        }
        let minimal = minimal_scale(&self.bounds)?;
        if self.c <= minimal {
            return Err(Error::Config(format!(
                "c = {} does not clear the likelihood-separation threshold \
                 C > 1 + sqrt(1/(alpha c_ab)); smallest admissible c is {minimal}",
                self.c
            )));
        }
        self.resolve_class()?.validate()
    }

    /// Materialize the class, sampling mixture components when asked.
    pub fn resolve_class(&self) -> Result<ClassSpec> {
        Ok(match &self.class {
            ConfigClass::Ambient => ClassSpec::Ambient { bounds: self.bounds },
            ConfigClass::Lipschitz { gamma, q, psi } => ClassSpec::Lipschitz {
                gamma: *gamma,
                q: *q,
                psi: *psi,
            },
            ConfigClass::Bv { zeta } => ClassSpec::Bv { zeta: *zeta },
            ConfigClass::Quad { gamma } => ClassSpec::Quad {
                gamma: *gamma,
                bounds: self.bounds,
            },
            ConfigClass::ConvMix { k, components } => ClassSpec::ConvMix {
                k: *k,
                components: components.clone(),
            },
            ConfigClass::ConvMixSampled { k } => {
                let ambient = ClassSpec::Ambient { bounds: self.bounds };
                let mut rng = stream(self.seed, Domain::Member, u64::MAX >> 16);
                let components = (0..*k)
                    .map(|_| sample_member_on_grid(&ambient, &mut rng, self.m))
                    .collect::<Result<Vec<_>>>()?;
                ClassSpec::ConvMix { k: *k, components }
            }
        })
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            depth: if self.depth_policy == "theorem" {
                DepthPolicy::Theorem
            } else {
                DepthPolicy::Fixed(self.j_cap)
            },
            j_cap: self.j_cap,
            radius_multiplier: self.radius_multiplier,
            adaptive: self.adaptive,
            packing_budget: self.packing_budget,
            center_count: self.center_count,
        }
    }

    /// Stable fingerprint of the effective config (FNV-1a over the canonical
    /// JSON). Not cryptographic; it only ties outputs to their settings.
    /// Output path and thread count do not affect any result, so they are
    /// normalized out before hashing.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.threads = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
