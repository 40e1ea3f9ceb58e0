//! Channel sample datasets: generation, min-max normalization, splitting, and
//! CSV persistence of the eight-column (positions, distance, gain) schema.

use crate::channel::{ground_truth_loss_db, ChannelParams};
use crate::error::{Error, Result};
use crate::geometry::{Environment, Position};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const FEATURE_COUNT: usize = 8;
pub const CSV_HEADER: &str = "xG,yG,zG,xU,yU,zU,d,g";

/// One measurement row: GU position, UAV position, their distance, and the
/// channel gain in dB (gain = -loss, so larger is better).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub gu: Position,
    pub uav: Position,
    pub distance: f64,
    pub gain_db: f64,
}

impl Sample {
    pub fn from_positions(gu: Position, uav: Position, gain_db: f64) -> Self {
        Self {
            gu,
            uav,
            distance: gu.distance(&uav),
            gain_db,
        }
    }

    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        [
            self.gu.x,
            self.gu.y,
            self.gu.z,
            self.uav.x,
            self.uav.y,
            self.uav.z,
            self.distance,
            self.gain_db,
        ]
    }

    pub fn from_features(f: [f64; FEATURE_COUNT]) -> Self {
        Self {
            gu: Position::new(f[0], f[1], f[2]),
            uav: Position::new(f[3], f[4], f[5]),
            distance: f[6],
            gain_db: f[7],
        }
    }
}

/// Per-feature min-max extrema captured when a dataset is normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; FEATURE_COUNT],
    pub max: [f64; FEATURE_COUNT],
}

impl NormStats {
    pub fn from_rows(rows: &[Sample]) -> Self {
        let mut min = [f64::INFINITY; FEATURE_COUNT];
        let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
        for row in rows {
            for (i, v) in row.features().iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        Self { min, max }
    }

    /// A feature with no spread normalizes to zero.
    pub fn is_degenerate(&self, feature: usize) -> bool {
        self.max[feature] <= self.min[feature]
    }

    pub fn normalize_value(&self, feature: usize, v: f64) -> f64 {
        if self.is_degenerate(feature) {
            0.0
        } else {
            (v - self.min[feature]) / (self.max[feature] - self.min[feature])
        }
    }

    pub fn denormalize_value(&self, feature: usize, v: f64) -> f64 {
        if self.is_degenerate(feature) {
            self.min[feature]
        } else {
            self.min[feature] + v * (self.max[feature] - self.min[feature])
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// An immutable collection of samples, optionally carrying the stats it was
/// normalized with. A freshly self-normalized dataset has every feature in
/// [0,1]; normalizing *other* data with stored stats may leave that range,
/// which callers must tolerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Sample>,
    pub stats: Option<NormStats>,
    pub normalized: bool,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Sample>) -> Self {
        Self {
            rows,
            stats: None,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features()[feature]).collect()
    }

    /// Min-max normalizes every feature to [0,1] and returns the stats used.
    pub fn normalize(&self) -> (Dataset, NormStats) {
        let stats = NormStats::from_rows(&self.rows);
        (self.normalize_with(&stats), stats)
    }

    /// Normalizes with previously captured stats (shared-stats pipelines).
    pub fn normalize_with(&self, stats: &NormStats) -> Dataset {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut f = r.features();
                for (i, v) in f.iter_mut().enumerate() {
                    *v = stats.normalize_value(i, *v);
                }
                Sample::from_features(f)
            })
            .collect();
        Dataset {
            rows,
            stats: Some(stats.clone()),
            normalized: true,
        }
    }

    /// Inverse of [`Dataset::normalize_with`].
    pub fn denormalize(&self, stats: &NormStats) -> Dataset {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut f = r.features();
                for (i, v) in f.iter_mut().enumerate() {
                    *v = stats.denormalize_value(i, *v);
                }
                Sample::from_features(f)
            })
            .collect();
        Dataset {
            rows,
            stats: None,
            normalized: false,
        }
    }

    /// Reproducible shuffled split into (train, validation) of sizes
    /// (ceil(n*fraction), rest).
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        assert!(
            train_fraction > 0.0 && train_fraction < 1.0,
            "train fraction must be in (0,1)"
        );
        let mut indices: Vec<usize> = (0..self.rows.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let n_train = (self.rows.len() as f64 * train_fraction).round() as usize;
        let make = |idx: &[usize]| Dataset {
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            stats: self.stats.clone(),
            normalized: self.normalized,
        };
        (make(&indices[..n_train]), make(&indices[n_train..]))
    }

    /// Appends the rows of `other`; both sides must be on the same scale.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().copied());
        Dataset {
            rows,
            stats: self.stats.clone(),
            normalized: self.normalized,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.rows.len() * 64 + 32);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let f = row.features();
            for (i, v) in f.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // Shortest round-trip formatting keeps read∘write exact.
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let display = path.display().to_string();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == CSV_HEADER => {}
            Some((_, header)) => {
                return Err(Error::CsvParse {
                    path: display,
                    line: 1,
                    msg: format!("unexpected header {header:?}"),
                })
            }
            None => {
                return Err(Error::CsvParse {
                    path: display,
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != FEATURE_COUNT {
                return Err(Error::CsvParse {
                    path: display,
                    line: idx + 1,
                    msg: format!("expected {FEATURE_COUNT} fields, got {}", fields.len()),
                });
            }
            let mut f = [0.0; FEATURE_COUNT];
            for (i, field) in fields.iter().enumerate() {
                f[i] = field.trim().parse::<f64>().map_err(|e| Error::CsvParse {
                    path: display.clone(),
                    line: idx + 1,
                    msg: format!("field {}: {e}", i + 1),
                })?;
            }
            rows.push(Sample::from_features(f));
        }
        Ok(Dataset::from_rows(rows))
    }
}

/// Which channel produces the gain column of generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSource {
    /// Geometric LoS/NLoS branch plus shadowing (the "real" simulator).
    GroundTruth,
    /// The analytic sigmoid-blend model, noise-free.
    Analytic,
}

/// Simulates `n` rows: UAV positions uniform in the flight volume, GU drawn
/// from the environment's user list, gain from the ground-truth channel.
pub fn generate_dataset(
    env: &Environment,
    params: &ChannelParams,
    n: usize,
    seed: u64,
) -> Dataset {
    generate_dataset_from(env, params, n, seed, ChannelSource::GroundTruth)
}

/// [`generate_dataset`] with an explicit channel source.
pub fn generate_dataset_from(
    env: &Environment,
    params: &ChannelParams,
    n: usize,
    seed: u64,
    source: ChannelSource,
) -> Dataset {
    assert!(n >= 1, "dataset must have at least one row");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let uav = env.sample_uav_position(&mut rng);
        let gu = env.gu_positions[rng.gen_range(0..env.gu_positions.len())];
        let loss = match source {
            ChannelSource::GroundTruth => ground_truth_loss_db(&uav, &gu, env, params, &mut rng),
            ChannelSource::Analytic => crate::channel::expected_loss_db(&uav, &gu, params),
        };
        rows.push(Sample::from_positions(gu, uav, -loss));
    }
    Dataset::from_rows(rows)
}

/// Pearson correlation of two equally long columns; zero when either side is
/// constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{expected_loss_db, fspl_db};
    use crate::geometry::{sample_environment, EnvGenConfig};

    fn small_env() -> Environment {
        sample_environment(3, &EnvGenConfig::default()).unwrap()
    }

    #[test]
    fn generation_is_reproducible_and_consistent() {
        let env = small_env();
        let params = ChannelParams::default();
        let a = generate_dataset(&env, &params, 50, 11);
        let b = generate_dataset(&env, &params, 50, 11);
        assert_eq!(a, b);
        for row in &a.rows {
            let d = row.gu.distance(&row.uav);
            assert!((row.distance - d).abs() <= 1e-6 * d.max(1.0));
        }
    }

    #[test]
    fn generation_with_clear_sky_matches_analytic_los() {
        let cfg = EnvGenConfig {
            building_count: 0,
            gu_height: 0.0,
            ..EnvGenConfig::default()
        };
        let env = sample_environment(4, &cfg).unwrap();
        let params = ChannelParams {
            shadow_sigma_los: 0.0,
            shadow_sigma_nlos: 0.0,
            ..ChannelParams::default()
        };
        let ds = generate_dataset(&env, &params, 40, 2);
        for row in &ds.rows {
            let expect = -(fspl_db(row.distance, &params) + params.eps_los);
            assert!((row.gain_db - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_source_reproduces_expected_loss() {
        let env = small_env();
        let params = ChannelParams::default();
        let ds = generate_dataset_from(&env, &params, 25, 5, ChannelSource::Analytic);
        for row in &ds.rows {
            let expect = -expected_loss_db(&row.uav, &row.gu, &params);
            assert!((row.gain_db - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_maps_extrema_to_unit_interval() {
        let rows = vec![
            Sample::from_positions(Position::new(0.0, 0.0, 250.0), Position::new(0.0, 0.0, 250.0), -60.0),
            Sample::from_positions(Position::new(500.0, 10.0, 500.0), Position::new(20.0, 5.0, 500.0), -80.0),
            Sample::from_positions(Position::new(1000.0, 20.0, 750.0), Position::new(40.0, 10.0, 750.0), -100.0),
        ];
        let ds = Dataset::from_rows(rows);
        let (norm, stats) = ds.normalize();
        // zG column runs 250,500,750 -> 0, 0.5, 1.
        let col: Vec<f64> = norm.feature_column(2);
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        for row in &norm.rows {
            for v in row.features() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(!stats.is_degenerate(2));
    }

    #[test]
    fn normalize_round_trip_is_identity() {
        let env = small_env();
        let ds = generate_dataset(&env, &ChannelParams::default(), 100, 9);
        let (norm, stats) = ds.normalize();
        let back = norm.denormalize(&stats);
        for (a, b) in ds.rows.iter().zip(&back.rows) {
            for (x, y) in a.features().iter().zip(b.features()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let rows = vec![
            Sample::from_positions(Position::new(5.0, 1.0, 250.0), Position::new(9.0, 2.0, 300.0), -70.0),
            Sample::from_positions(Position::new(6.0, 2.0, 250.0), Position::new(8.0, 3.0, 400.0), -75.0),
        ];
        let (norm, stats) = Dataset::from_rows(rows).normalize();
        assert!(stats.is_degenerate(2));
        assert!(norm.rows.iter().all(|r| r.features()[2] == 0.0));
        // Denormalizing the degenerate column recovers the constant.
        let back = norm.denormalize(&stats);
        assert!(back.rows.iter().all(|r| r.features()[2] == 250.0));
    }

    #[test]
    fn stored_stats_on_new_data_may_leave_unit_interval() {
        let base = vec![
            Sample::from_positions(Position::new(0.0, 0.0, 0.0), Position::new(0.0, 0.0, 100.0), -60.0),
            Sample::from_positions(Position::new(10.0, 10.0, 0.0), Position::new(5.0, 5.0, 200.0), -90.0),
        ];
        let (_, stats) = Dataset::from_rows(base).normalize();
        let outlier = Dataset::from_rows(vec![Sample::from_positions(
            Position::new(20.0, 20.0, 0.0),
            Position::new(10.0, 10.0, 300.0),
            -120.0,
        )]);
        let norm = outlier.normalize_with(&stats);
        assert!(norm.rows[0].features().iter().any(|&v| v > 1.0 || v < 0.0));
    }

    #[test]
    fn normalization_preserves_rank_correlation_sign() {
        let env = small_env();
        let ds = generate_dataset(&env, &ChannelParams::default(), 400, 21);
        let raw = pearson(&ds.feature_column(6), &ds.feature_column(7));
        let (norm, _) = ds.normalize();
        let scaled = pearson(&norm.feature_column(6), &norm.feature_column(7));
        assert!(raw < 0.0, "distance and gain should anticorrelate");
        assert_eq!(raw.signum(), scaled.signum());
        assert!((raw - scaled).abs() < 1e-9, "linear rescale keeps pearson");
    }

    #[test]
    fn split_sizes_partition_and_reproducibility() {
        let env = small_env();
        let ds = generate_dataset(&env, &ChannelParams::default(), 10, 33);
        let (train, val) = ds.split(0.7, 4);
        assert_eq!(train.len(), 7);
        assert_eq!(val.len(), 3);
        let mut union: Vec<_> = train.rows.iter().chain(&val.rows).map(|r| r.features()).collect();
        let mut original: Vec<_> = ds.rows.iter().map(|r| r.features()).collect();
        union.sort_by(|a, b| a.partial_cmp(b).unwrap());
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(union, original);
        let (train2, val2) = ds.split(0.7, 4);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
    }

    #[test]
    fn csv_round_trip_is_value_identical() {
        let dir = std::env::temp_dir().join("skymap-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        let env = small_env();
        let ds = generate_dataset(&env, &ChannelParams::default(), 64, 17);
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(ds.rows, back.rows);
    }

    #[test]
    fn csv_empty_dataset_is_header_only() {
        let dir = std::env::temp_dir().join("skymap-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        Dataset::from_rows(vec![]).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        assert!(Dataset::read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_short_row_reports_line_number() {
        let dir = std::env::temp_dir().join("skymap-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, format!("{CSV_HEADER}\n1,2,3,4,5,6,7,8\n1,2,3,4,5,6,7\n")).unwrap();
        let err = Dataset::read_csv(&path).unwrap_err();
        match err {
            Error::CsvParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
