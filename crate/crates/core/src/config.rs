//! TOML configuration for benchmark runs.
//!
//! Every section is optional and every key has a default; unknown keys are
//! rejected. Lengths are meters, times seconds, angles degrees.
//!
//! ```toml
//! [bench]
//! scenarios = ["plastic", "wide"]   # built-in: metal, plastic, wide, cap
//! methods = ["servo", "spiral"]     # random, spiral, servo, servo_then_spiral, optimal
//! trials = 100
//! seed = 7
//!
//! [estimator]
//! preset = "synth-like"             # exact, synth-like, metal-on-plastic
//! gaussian_sigma = 1.5              # optional overrides, pixels
//! outlier_prob = 0.005
//! miss_prob = 0.0
//!
//! [servo]
//! alpha_tau = 0.9
//! alpha_gamma = 0.9
//! alpha_phi = 0.9
//! phi_t = 0.0005                    # default: hole diameter / 20
//! max_duration = 20.0
//! boundary_factor = 2.0             # in uncertainty radii
//!
//! [spiral]
//! pitch_factor = 1.5                # pitch = factor * clearance
//! pitch = 0.0003                    # absolute pitch, overrides pitch_factor
//! speed = 0.01
//!
//! [random]
//! time_limit = 30.0
//! probe_time = 0.5
//!
//! [motion]
//! max_speed = 0.05
//! dt = 0.0333333
//!
//! [world]
//! camera_count = 2
//! calibration = { max_rot_deg = 2.0, max_trans = 0.01 }
//! grasp = { max_rot_deg = 1.0, max_trans = 0.001 }
//!
//! [world.camera_ranges]
//! distance = { lo = 0.12, hi = 0.15 }
//! elevation = { lo = 35.0, hi = 45.0 }
//! roll = { lo = -5.0, hi = 5.0 }
//!
//! [[scenario]]
//! name = "loose"
//! hole_diameter = 0.011
//! peg_diameter = 0.010
//! required_depth = 0.01
//! start_height = { lo = 0.005, hi = 0.015 }
//! uncertainty_radius = 0.015        # default: 1.5 peg diameters
//! ```

use std::path::Path;

use crate::bench::BenchConfig;
use crate::error::{Error, Result};

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<BenchConfig> {
    let config: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Serializes a configuration back to TOML.
pub fn to_toml(config: &BenchConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Method;
    use crate::estimator::NoisePreset;

    // the schema shown in the module docs
    const DOC_EXAMPLE: &str = include_str!("config.rs");

    fn doc_toml() -> String {
        let start = DOC_EXAMPLE.find("//! ```toml\n").unwrap() + "//! ```toml\n".len();
        let end = start + DOC_EXAMPLE[start..].find("//! ```").unwrap();
        DOC_EXAMPLE[start..end]
            .lines()
            .map(|l| l.strip_prefix("//!").unwrap_or(l).trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), BenchConfig::default());
    }

    #[test]
    fn documented_example_parses() {
        let c = parse_config(&doc_toml()).unwrap();
        assert_eq!(c.bench.methods, vec![Method::Servo, Method::Spiral]);
        assert_eq!(c.bench.seed, 7);
        assert_eq!(c.estimator.preset, NoisePreset::SynthLike);
        assert_eq!(c.spiral.pitch, Some(0.0003));
        assert!((c.resolve_scenario("loose").unwrap().clearance() - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(parse_config("[bench]\ntrails = 3\n").is_err());
        assert!(parse_config("[servo]\nalpha = 0.5\n").is_err());
        assert!(parse_config("[world.calibration]\nmax_rot = 1.0\n").is_err());
        assert!(parse_config("[nonsense]\n").is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(parse_config("[bench]\ntrials = 0\n").is_err());
        assert!(parse_config("[bench]\nmethods = [\"teleport\"]\n").is_err());
        assert!(parse_config("[bench]\nscenarios = [\"nowhere\"]\n").is_err());
        assert!(parse_config("[motion]\nmax_speed = -1.0\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = parse_config(&doc_toml()).unwrap();
        assert_eq!(parse_config(&to_toml(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_config(Path::new("/definitely/not/here.toml")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.toml"));
    }
}
