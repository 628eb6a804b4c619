//! Seeded synthetic datasets.
//!
//! `law_like` and `dutch_like` produce raw tables with the same columns as
//! the Law School and Dutch census presets, so they run through the regular
//! CSV ingestion. `planted_bias_clients` builds ready-made client shards in
//! which some clients have labels driven by the sensitive attribute.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{self, DataPoint, DatasetSpec};
use crate::rng;
use crate::{Error, Result};

/// A raw table of string cells with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Encodes the table through the regular ingestion path.
    pub fn to_points(&self, spec: &DatasetSpec) -> Result<Vec<DataPoint>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        data::read_dataset(buf.as_slice(), spec)
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn clamp_int(v: f64, lo: i64, hi: i64) -> i64 {
    (v.round() as i64).clamp(lo, hi)
}

/// Bar-passage-shaped data: a latent ability drives test scores, grades and
/// passage; the non-White group has a lower ability mean, which produces a
/// sizable parity gap in a plain classifier.
pub fn law_like(n: usize, seed: u64) -> Table {
    let mut rng = rng::stream(seed, "synth-law", 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let header = [
        "decile1b", "decile3", "lsat", "ugpa", "zfygpa", "zgpa", "fulltime", "fam_inc", "male",
        "tier", "race", "pass_bar",
    ];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let white = rng.random_bool(0.84);
        let ability = std.sample(&mut rng) + if white { 0.3 } else { -1.6 };
        let noisy = |rng: &mut rng::StreamRng, scale: f64| ability + scale * std.sample(rng);
        let lsat = 37.0 + 4.5 * noisy(&mut rng, 0.5);
        let ugpa = (3.2 + 0.35 * noisy(&mut rng, 0.9)).clamp(1.5, 4.0);
        let zfygpa = 0.8 * noisy(&mut rng, 0.8);
        let zgpa = 0.8 * noisy(&mut rng, 0.7);
        let decile1b = clamp_int(5.5 + 2.3 * noisy(&mut rng, 0.8), 1, 10);
        let decile3 = clamp_int(5.5 + 2.3 * noisy(&mut rng, 0.7), 1, 10);
        let fulltime = if rng.random_bool(0.9) { 1 } else { 2 };
        let fam_inc = clamp_int(3.3 + 0.9 * (0.4 * ability + std.sample(&mut rng)), 1, 5);
        let male = u8::from(rng.random_bool(0.56));
        let tier = clamp_int(3.7 + 1.1 * noisy(&mut rng, 1.0), 1, 6);
        let pass = rng.random_bool(sigmoid(3.1 + 2.0 * ability + 0.25 * (2 - fulltime) as f64));
        rows.push(vec![
            decile1b.to_string(),
            decile3.to_string(),
            format!("{lsat:.1}"),
            format!("{ugpa:.2}"),
            format!("{zfygpa:.3}"),
            format!("{zgpa:.3}"),
            fulltime.to_string(),
            fam_inc.to_string(),
            male.to_string(),
            tier.to_string(),
            if white { "White" } else { "Non-White" }.to_string(),
            u8::from(pass).to_string(),
        ]);
    }
    Table {
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

/// Census-shaped data with a prestigious-occupation label that depends on
/// education and economic status, and on sex through them.
pub fn dutch_like(n: usize, seed: u64) -> Table {
    let mut rng = rng::stream(seed, "synth-dutch", 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let header = [
        "sex",
        "age",
        "household_position",
        "household_size",
        "prev_residence_place",
        "citizenship",
        "country_birth",
        "edu_level",
        "economic_status",
        "cur_eco_activity",
        "marital_status",
        "occupation",
    ];
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let male = rng.random_bool(0.5);
        let g = if male { 0.3 } else { -0.3 };
        let age = clamp_int(8.0 + 2.5 * std.sample(&mut rng), 4, 15);
        let edu = clamp_int(3.0 + g + 1.3 * std.sample(&mut rng), 0, 5);
        let eco = clamp_int(111.0 + 1.5 * (0.5 * g + std.sample(&mut rng)), 111, 122);
        let activity = clamp_int(130.0 + 2.5 * (g + std.sample(&mut rng)), 124, 140);
        let hh_pos = clamp_int(1120.0 + 6.0 * std.sample(&mut rng), 1110, 1132);
        let hh_size = clamp_int(112.0 + 1.5 * std.sample(&mut rng), 111, 116);
        let prev = u8::from(rng.random_bool(0.1)) + 1;
        let citizen = u8::from(rng.random_bool(0.04)) + 1;
        let birth = u8::from(rng.random_bool(0.08)) + 1;
        let marital = clamp_int(2.0 + std.sample(&mut rng), 1, 4);
        let logit = -0.2 + 1.1 * (edu as f64 - 3.0) + 0.35 * (eco as f64 - 111.0) / 1.5
            + 0.2 * (activity as f64 - 130.0) / 2.5
            + 0.25 * (age as f64 - 8.0) / 2.5
            + 0.35 * g;
        let prestigious = rng.random_bool(sigmoid(logit));
        rows.push(vec![
            if male { "male" } else { "female" }.to_string(),
            age.to_string(),
            hh_pos.to_string(),
            hh_size.to_string(),
            prev.to_string(),
            citizen.to_string(),
            birth.to_string(),
            edu.to_string(),
            eco.to_string(),
            activity.to_string(),
            marital.to_string(),
            if prestigious { "5_4_9" } else { "2_1" }.to_string(),
        ]);
    }
    Table {
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

/// `k` client shards of `n_per` points with three features plus a constant.
///
/// On ordinary clients the label follows the features and is independent of
/// the sensitive attribute. On planted clients the label equals the
/// sensitive attribute (mapped to ±1) with probability `(1 + corr) / 2`,
/// which gives a label/attribute correlation of about `corr` when both are
/// balanced.
pub fn planted_bias_clients(
    k: usize,
    n_per: usize,
    planted: &[usize],
    corr: f64,
    seed: u64,
) -> Result<Vec<Vec<DataPoint>>> {
    if !(-1.0..=1.0).contains(&corr) {
        return Err(Error::Config(format!("correlation {corr} outside [-1,1]")));
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let beta = [1.2, -0.8, 0.5];
    (0..k)
        .map(|c| {
            let mut rng = rng::stream(seed, "synth-planted", c as u64);
            (0..n_per)
                .map(|_| {
                    let s = u8::from(rng.random_bool(0.5));
                    let mut x: Vec<f64> = (0..3).map(|_| std.sample(&mut rng)).collect();
                    let y = if planted.contains(&c) {
                        let sy = if s == 1 { 1 } else { -1 };
                        if rng.random_bool((1.0 + corr) / 2.0) {
                            sy
                        } else {
                            -sy
                        }
                    } else {
                        let m: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
                        if rng.random_bool(sigmoid(2.0 * m)) {
                            1
                        } else {
                            -1
                        }
                    };
                    x.push(1.0);
                    DataPoint::new(x, s, y)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_like_matches_schema_and_rates() {
        let t = law_like(4000, 7);
        let pts = t.to_points(&DatasetSpec::law_school()).unwrap();
        assert_eq!(pts.len(), 4000);
        let priv_share = pts.iter().filter(|p| p.s == 1).count() as f64 / 4000.0;
        let pass = pts.iter().filter(|p| p.y == 1).count() as f64 / 4000.0;
        assert!((priv_share - 0.84).abs() < 0.03, "{priv_share}");
        assert!((0.82..0.94).contains(&pass), "{pass}");
        assert_eq!(law_like(50, 7), law_like(50, 7));
    }

    #[test]
    fn dutch_like_parses() {
        let pts = dutch_like(1000, 1).to_points(&DatasetSpec::dutch()).unwrap();
        assert_eq!(pts.len(), 1000);
        assert!(pts.iter().any(|p| p.y == 1) && pts.iter().any(|p| p.y == -1));
    }

    #[test]
    fn planted_correlation() {
        let shards = planted_bias_clients(3, 5000, &[1], 0.8, 3).unwrap();
        let agree = |v: &[DataPoint]| {
            v.iter().filter(|p| (p.s == 1) == (p.y == 1)).count() as f64 / v.len() as f64
        };
        assert!((agree(&shards[1]) - 0.9).abs() < 0.02);
        assert!((agree(&shards[0]) - 0.5).abs() < 0.03);
    }
}
