//! Synthetic data generation, CSV ingestion, and standardization.
//!
//! The CSV schema is a header `u1,...,u_k,y1,...,y_n` followed by one numeric
//! row per time step; lines starting with `#` are comments (generated files
//! carry their configuration in such a header). Control columns may be absent.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::numerics::Mat;
use crate::Result;

/// One observed time series: `T x d_y` observations and `T x d_c` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub y: Mat<f64>,
    pub c: Mat<f64>,
    pub name: String,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.y.rows
    }

    pub fn is_empty(&self) -> bool {
        self.y.rows == 0
    }

    pub fn d_y(&self) -> usize {
        self.y.cols
    }

    pub fn d_c(&self) -> usize {
        self.c.cols
    }

    /// Rows `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Sequence {
        let sub = |m: &Mat<f64>| Mat {
            rows: end - start,
            cols: m.cols,
            data: m.data[start * m.cols..end * m.cols].to_vec(),
        };
        Sequence { y: sub(&self.y), c: sub(&self.c), name: self.name.clone() }
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.y.data.iter().chain(self.c.data.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("sequence {} contains non-finite values", self.name)))
        }
    }
}

/// Standard normal draw via Box-Muller, deterministic given the generator state.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The 2-D kink transition mean: `x -> [f(x), -0.5 f(x)] + x` with
/// `f(x) = 0.8 + (x1 + 0.2)(1 - 5 / (1 + e^{-2 x1})) + x2`.
pub fn kink_f(x: &[f64; 2]) -> f64 {
    0.8 + (x[0] + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x[0]).exp())) + x[1]
}

/// Deterministic part of the kink state update.
pub fn kink_step(x: &[f64; 2]) -> [f64; 2] {
    let f = kink_f(x);
    [f + x[0], -0.5 * f + x[1]]
}

/// Process noise standard deviation used by [`gen_kink`]: `sqrt(0.001)`.
pub const KINK_PROCESS_STD: f64 = 0.03162277660168379; // sqrt(0.001)
/// Observation noise standard deviation used by [`gen_kink`]: `sqrt(0.01)`.
pub const KINK_OBS_STD: f64 = 0.1;
/// Initial-state standard deviation: `sqrt(0.1)`.
pub const KINK_X0_STD: f64 = 0.31622776601683794;

/// Simulate the 2-D kink system; deterministic per seed.
///
/// Each sequence draws `x0 ~ N(0, 0.1 I)`, then iterates the kink update with
/// additive process noise and emits `y = x + e` with observation noise.
pub fn gen_kink(n_seq: usize, t_len: usize, seed: u64) -> Result<Vec<Sequence>> {
    if n_seq == 0 || t_len == 0 {
        return Err(Error::InvalidConfig("gen_kink needs n_seq >= 1 and t_len >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_seq);
    for s in 0..n_seq {
        let mut x = [
            KINK_X0_STD * standard_normal(&mut rng),
            KINK_X0_STD * standard_normal(&mut rng),
        ];
        let mut y = Mat::zeros(t_len, 2);
        for t in 0..t_len {
            let mean = kink_step(&x);
            x = [
                mean[0] + KINK_PROCESS_STD * standard_normal(&mut rng),
                mean[1] + KINK_PROCESS_STD * standard_normal(&mut rng),
            ];
            y.set(t, 0, x[0] + KINK_OBS_STD * standard_normal(&mut rng));
            y.set(t, 1, x[1] + KINK_OBS_STD * standard_normal(&mut rng));
        }
        out.push(Sequence { y, c: Mat::zeros(t_len, 0), name: format!("kink_{s:03}") });
    }
    Ok(out)
}

/// Generate kink sequences, discarding any whose observations exceed
/// `max_abs` in magnitude (the raw system is marginally unstable and a noise
/// realization occasionally escapes to infinity). Deterministic per seed.
pub fn gen_kink_stable(n_seq: usize, t_len: usize, seed: u64, max_abs: f64) -> Result<Vec<Sequence>> {
    let mut out = Vec::with_capacity(n_seq);
    let mut batch_seed = seed;
    while out.len() < n_seq {
        let batch = gen_kink(n_seq, t_len, batch_seed)?;
        for seq in batch {
            if out.len() < n_seq && seq.y.data.iter().all(|v| v.abs() <= max_abs) {
                out.push(seq);
            }
        }
        batch_seed = batch_seed.wrapping_add(0x9e3779b97f4a7c15);
    }
    for (i, seq) in out.iter_mut().enumerate() {
        seq.name = format!("kink_{i:03}");
    }
    Ok(out)
}

/// Parse the CSV schema described in the module docs.
pub fn load_csv(path: &Path) -> Result<Sequence> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    parse_csv(reader, name)
}

pub fn parse_csv(reader: impl BufRead, name: String) -> Result<Sequence> {
    let mut lines = reader.lines().enumerate();
    // header: skip comments and blank lines
    let (header_line, header) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Io(e.to_string()))?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                break (i + 1, trimmed.to_string());
            }
            None => return Err(Error::EmptySequence),
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d_c = cols.iter().take_while(|c| c.starts_with('u')).count();
    let d_y = cols.len() - d_c;
    if d_y == 0 || !cols[d_c..].iter().all(|c| c.starts_with('y')) {
        return Err(Error::ParseError {
            line: header_line,
            message: format!("header must be u1..u_k,y1..y_n, got `{header}`"),
        });
    }
    for (i, expect) in (1..=d_c).map(|i| format!("u{i}")).chain((1..=d_y).map(|i| format!("y{i}"))).enumerate() {
        if cols[i] != expect {
            return Err(Error::MissingColumn(expect));
        }
    }

    let mut c_rows: Vec<f64> = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    let mut t = 0;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::ParseError {
                line: i + 1,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::ParseError {
                line: i + 1,
                message: format!("non-numeric value `{field}`"),
            })?;
            if j < d_c {
                c_rows.push(v);
            } else {
                y_rows.push(v);
            }
        }
        t += 1;
    }
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let seq = Sequence {
        y: Mat { rows: t, cols: d_y, data: y_rows },
        c: Mat { rows: t, cols: d_c, data: c_rows },
        name,
    };
    seq.assert_finite()?;
    Ok(seq)
}

/// Write a sequence in the same schema; `header_comments` are emitted as `#` lines.
pub fn write_csv(path: &Path, seq: &Sequence, header_comments: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    for c in header_comments {
        writeln!(file, "# {c}")?;
    }
    let mut cols: Vec<String> = (1..=seq.d_c()).map(|i| format!("u{i}")).collect();
    cols.extend((1..=seq.d_y()).map(|i| format!("y{i}")));
    writeln!(file, "{}", cols.join(","))?;
    for t in 0..seq.len() {
        let mut fields: Vec<String> = seq.c.row(t).iter().map(|v| format_f64(*v)).collect();
        fields.extend(seq.y.row(t).iter().map(|v| format_f64(*v)));
        writeln!(file, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Shortest representation that round-trips through `parse::<f64>` exactly.
pub fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:e}");
    }
    s
}

/// Per-channel affine normalization fit on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub c_mean: Vec<f64>,
    pub c_std: Vec<f64>,
}

fn channel_stats(m: &Mat<f64>, label: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut means = Vec::with_capacity(m.cols);
    let mut stds = Vec::with_capacity(m.cols);
    for j in 0..m.cols {
        let col: Vec<f64> = (0..m.rows).map(|i| m.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        let std = var.sqrt();
        if std < 1e-12 * (mean.abs() + 1.0) {
            return Err(Error::DegenerateChannel { channel: format!("{label}{}", j + 1) });
        }
        means.push(mean);
        stds.push(std);
    }
    Ok((means, stds))
}

impl Standardizer {
    pub fn fit(train: &Sequence) -> Result<Self> {
        let (y_mean, y_std) = channel_stats(&train.y, "y")?;
        let (c_mean, c_std) = if train.d_c() > 0 {
            channel_stats(&train.c, "u")?
        } else {
            (vec![], vec![])
        };
        Ok(Standardizer { y_mean, y_std, c_mean, c_std })
    }

    pub fn apply(&self, seq: &Sequence) -> Sequence {
        let norm = |m: &Mat<f64>, mean: &[f64], std: &[f64]| {
            let mut out = m.clone();
            for i in 0..m.rows {
                for j in 0..m.cols {
                    out.set(i, j, (m.get(i, j) - mean[j]) / std[j]);
                }
            }
            out
        };
        Sequence {
            y: norm(&seq.y, &self.y_mean, &self.y_std),
            c: if seq.d_c() > 0 { norm(&seq.c, &self.c_mean, &self.c_std) } else { seq.c.clone() },
            name: seq.name.clone(),
        }
    }

    pub fn invert(&self, seq: &Sequence) -> Sequence {
        let denorm = |m: &Mat<f64>, mean: &[f64], std: &[f64]| {
            let mut out = m.clone();
            for i in 0..m.rows {
                for j in 0..m.cols {
                    out.set(i, j, m.get(i, j) * std[j] + mean[j]);
                }
            }
            out
        };
        Sequence {
            y: denorm(&seq.y, &self.y_mean, &self.y_std),
            c: if seq.d_c() > 0 { denorm(&seq.c, &self.c_mean, &self.c_std) } else { seq.c.clone() },
            name: seq.name.clone(),
        }
    }
}

/// Split at `floor(T * frac)`, fit a [`Standardizer`] on the first portion,
/// and return both portions standardized.
pub fn split_standardize(seq: &Sequence, frac: f64) -> Result<(Sequence, Sequence, Standardizer)> {
    if !(0.0..1.0).contains(&frac) || (seq.len() as f64 * frac) < 2.0 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            needed: (2.0 / frac.max(1e-9)).ceil() as usize,
        });
    }
    let split = (seq.len() as f64 * frac).floor() as usize;
    if split >= seq.len() {
        return Err(Error::SequenceTooShort { len: seq.len(), needed: split + 1 });
    }
    let train_raw = seq.slice(0, split);
    let test_raw = seq.slice(split, seq.len());
    let std = Standardizer::fit(&train_raw)?;
    Ok((std.apply(&train_raw), std.apply(&test_raw), std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn kink_f_at_origin() {
        // 0.8 + 0.2 * (1 - 2.5) = 0.5
        assert!((kink_f(&[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kink_noise_free_step() {
        let x1 = kink_step(&[0.0, 0.0]);
        assert!((x1[0] - 0.5).abs() < 1e-15);
        assert!((x1[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn gen_kink_deterministic_and_formula_consistent() {
        let a = gen_kink(3, 20, 42).unwrap();
        let b = gen_kink(3, 20, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].len(), 20);
        assert_eq!(a[0].d_y(), 2);
        assert_eq!(a[0].d_c(), 0);
        let c = gen_kink(3, 20, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gen_kink_noise_free_matches_oracle() {
        // re-evaluate the transition formula step by step as an oracle
        let mut x = [0.13, -0.4];
        for _ in 0..30 {
            let next = kink_step(&x);
            let f = 0.8 + (x[0] + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x[0]).exp())) + x[1];
            assert!((next[0] - (f + x[0])).abs() < 1e-14);
            assert!((next[1] - (-0.5 * f + x[1])).abs() < 1e-14);
            x = next;
        }
    }

    #[test]
    fn gen_kink_rejects_zero_sizes() {
        assert!(matches!(gen_kink(0, 10, 1), Err(Error::InvalidConfig(_))));
        assert!(matches!(gen_kink(1, 0, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn gen_kink_stable_bounds_observations() {
        let seqs = gen_kink_stable(10, 50, 0, 20.0).unwrap();
        assert_eq!(seqs.len(), 10);
        for s in &seqs {
            assert!(s.y.data.iter().all(|v| v.abs() <= 20.0));
        }
        assert_eq!(seqs, gen_kink_stable(10, 50, 0, 20.0).unwrap());
    }

    #[test]
    fn parse_minimal_files() {
        let seq = parse_csv(Cursor::new("u1,y1\n0.5,1.0\n0.25,2.0\n"), "t".into()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.d_c(), 1);
        assert_eq!(seq.d_y(), 1);
        assert_eq!(seq.y.get(1, 0), 2.0);
        assert_eq!(seq.c.get(0, 0), 0.5);

        let seq = parse_csv(Cursor::new("y1\n1.0\n"), "t".into()).unwrap();
        assert_eq!(seq.d_c(), 0);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "u1,y1\n1,2\n3,4\n5,6\n7,8\n9,10\n11,12\n13,oops\n";
        match parse_csv(Cursor::new(text), "t".into()) {
            Err(Error::ParseError { line: 8, .. }) => {}
            other => panic!("expected ParseError at line 8, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_header() {
        assert!(matches!(
            parse_csv(Cursor::new("a,b\n1,2\n"), "t".into()),
            Err(Error::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv(Cursor::new("u1,y2\n1,2\n"), "t".into()),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let seqs = gen_kink(1, 25, 7).unwrap();
        let dir = std::env::temp_dir().join("egpssm_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        write_csv(&path, &seqs[0], &["seed: 7".into()]).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.y.data, seqs[0].y.data);
    }

    #[test]
    fn standardize_round_trip_and_moments() {
        let seqs = gen_kink_stable(1, 100, 3, 20.0).unwrap();
        let (train, _test, std) = split_standardize(&seqs[0], 0.5).unwrap();
        assert_eq!(train.len(), 50);
        for j in 0..2 {
            let col: Vec<f64> = (0..train.len()).map(|i| train.y.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        let back = std.invert(&train);
        let orig = seqs[0].slice(0, 50);
        for (a, b) in back.y.data.iter().zip(orig.y.data.iter()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn degenerate_channel_rejected() {
        let seq = Sequence {
            y: Mat { rows: 4, cols: 1, data: vec![3.0; 4] },
            c: Mat::zeros(4, 0),
            name: "const".into(),
        };
        assert!(matches!(split_standardize(&seq, 0.5), Err(Error::DegenerateChannel { .. })));
    }

    #[test]
    fn short_sequence_rejected() {
        let seq = Sequence {
            y: Mat { rows: 3, cols: 1, data: vec![1.0, 2.0, 3.0] },
            c: Mat::zeros(3, 0),
            name: "short".into(),
        };
        assert!(matches!(split_standardize(&seq, 0.3), Err(Error::SequenceTooShort { .. })));
    }
}
