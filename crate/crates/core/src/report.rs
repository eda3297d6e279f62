//! Decoding reports, their CSV form, and threshold estimation.
//!
//! The CSV has one row per `(decoder, code, L, noise, p)` point:
//!
//! ```text
//! decoder,code,L,channel,sector,rounds,q,p,samples,bits,bit_errors,ber,ber_lo,ber_hi,logical_failures,ler,ler_lo,ler_hi
//! ```
//!
//! Rates are followed by their 95% Wilson interval. Wall-clock time is not
//! part of the table so identical runs produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::codes::{Sector, StabilizerCode};
use crate::error::{invalid, Result};
use crate::eval::{Counts, EvalPlan};
use crate::noise::Channel;

pub const CSV_HEADER: &str =
    "decoder,code,L,channel,sector,rounds,q,p,samples,bits,bit_errors,ber,ber_lo,ber_hi,logical_failures,ler,ler_lo,ler_hi";

const Z95: f64 = 1.959_963_984_540_054;

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let z2 = Z95 * Z95;
    let denom = n + z2;
    let center = (k + z2 / 2.0) / denom;
    let half = Z95 / denom * (k * (n - k) / n + z2 / 4.0).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub decoder: String,
    /// Code family, `toric` or `surface`.
    pub code: String,
    pub l: usize,
    pub channel: String,
    pub sector: String,
    pub rounds: usize,
    pub q: f64,
    pub p: f64,
    pub samples: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ber_lo: f64,
    pub ber_hi: f64,
    pub logical_failures: u64,
    pub ler: f64,
    pub ler_lo: f64,
    pub ler_hi: f64,
}

impl ReportRow {
    pub fn from_counts(decoder: &str, code: &StabilizerCode, sector: Sector, plan: &EvalPlan, p: f64, c: &Counts) -> Self {
        let (ber_lo, ber_hi) = wilson(c.bit_errors, c.bits);
        let (ler_lo, ler_hi) = wilson(c.logical_failures, c.samples);
        Self {
            decoder: decoder.to_string(),
            code: code.family().to_string(),
            l: code.distance(),
            channel: plan.channel.to_string(),
            sector: sector.name().to_string(),
            rounds: plan.rounds,
            q: plan.q,
            p,
            samples: c.samples,
            bits: c.bits,
            bit_errors: c.bit_errors,
            ber: c.bit_errors as f64 / c.bits as f64,
            ber_lo,
            ber_hi,
            logical_failures: c.logical_failures,
            ler: c.logical_failures as f64 / c.samples as f64,
            ler_lo,
            ler_hi,
        }
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.decoder,
            self.code,
            self.l,
            self.channel,
            self.sector,
            self.rounds,
            self.q,
            self.p,
            self.samples,
            self.bits,
            self.bit_errors,
            self.ber,
            self.ber_lo,
            self.ber_hi,
            self.logical_failures,
            self.ler,
            self.ler_lo,
            self.ler_hi
        )
    }

    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 18 {
            return Err(invalid(format!("line {line_no}: expected 18 fields, found {}", f.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str, line_no: usize) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| invalid(format!("line {line_no}: bad {name} {s:?}")))
        }
        let row = Self {
            decoder: f[0].to_string(),
            code: f[1].to_string(),
            l: num(f[2], "L", line_no)?,
            channel: f[3].to_string(),
            sector: f[4].to_string(),
            rounds: num(f[5], "rounds", line_no)?,
            q: num(f[6], "q", line_no)?,
            p: num(f[7], "p", line_no)?,
            samples: num(f[8], "samples", line_no)?,
            bits: num(f[9], "bits", line_no)?,
            bit_errors: num(f[10], "bit_errors", line_no)?,
            ber: num(f[11], "ber", line_no)?,
            ber_lo: num(f[12], "ber_lo", line_no)?,
            ber_hi: num(f[13], "ber_hi", line_no)?,
            logical_failures: num(f[14], "logical_failures", line_no)?,
            ler: num(f[15], "ler", line_no)?,
            ler_lo: num(f[16], "ler_lo", line_no)?,
            ler_hi: num(f[17], "ler_hi", line_no)?,
        };
        let rates = [row.ber, row.ber_lo, row.ber_hi, row.ler, row.ler_lo, row.ler_hi];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r))
            || row.logical_failures > row.samples
            || row.bit_errors > row.bits
        {
            return Err(invalid(format!("line {line_no}: inconsistent counts or rates")));
        }
        Ok(row)
    }

    /// Curve identity: everything but `L` and `p`.
    pub fn series_key(&self) -> String {
        format!(
            "{} {} {} {} T={} q={}",
            self.decoder, self.code, self.channel, self.sector, self.rounds, self.q
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeReport {
    pub rows: Vec<ReportRow>,
    /// Seconds spent evaluating; recorded in run manifests, not in the CSV.
    pub wall_clock_s: f64,
}

impl DecodeReport {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Parses a report CSV; the header must match [`CSV_HEADER`] exactly.
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => return Err(invalid(format!("unexpected CSV header {h:?}"))),
        None => return Err(invalid("empty report")),
    }
    lines.map(|(i, l)| ReportRow::parse(l.trim(), i + 1)).collect()
}

/// `LER(p)` of one lattice size.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub l: usize,
    /// `(p, LER)` pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub l_small: usize,
    pub l_large: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Threshold {
    Found {
        /// Median of the pairwise crossings.
        p: f64,
        /// Largest minus smallest crossing.
        spread: f64,
        crossings: Vec<Crossing>,
    },
    NotFound,
}

impl Threshold {
    pub fn value(&self) -> Option<f64> {
        match self {
            Threshold::Found { p, .. } => Some(*p),
            Threshold::NotFound => None,
        }
    }
}

/// Groups report rows into per-`L` curves of each series.
pub fn curves_by_series(rows: &[ReportRow]) -> BTreeMap<String, Vec<Curve>> {
    let mut map: BTreeMap<String, BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in rows {
        map.entry(r.series_key()).or_default().entry(r.l).or_default().push((r.p, r.ler));
    }
    map.into_iter()
        .map(|(k, by_l)| {
            let curves = by_l
                .into_iter()
                .map(|(l, mut points)| {
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Curve { l, points }
                })
                .collect();
            (k, curves)
        })
        .collect()
}

/// Linear interpolation of `ln LER` at `p`; `points` sorted, positive LER.
fn log_interp(points: &[(f64, f64)], p: f64) -> f64 {
    let i = points.partition_point(|&(x, _)| x < p);
    if i < points.len() && points[i].0 == p {
        return points[i].1.ln();
    }
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    let t = (p - x0) / (x1 - x0);
    y0.ln() + t * (y1.ln() - y0.ln())
}

/// First `p` where the larger lattice stops beating the smaller one.
fn pair_crossing(small: &Curve, large: &Curve) -> Option<f64> {
    let clean = |c: &Curve| -> Vec<(f64, f64)> { c.points.iter().copied().filter(|&(_, y)| y > 0.0).collect() };
    let (a, b) = (clean(small), clean(large));
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let lo = a[0].0.max(b[0].0);
    let hi = a[a.len() - 1].0.min(b[b.len() - 1].0);
    if lo >= hi {
        return None;
    }
    let mut grid: Vec<f64> = a.iter().chain(&b).map(|&(x, _)| x).filter(|&x| x >= lo && x <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let d: Vec<f64> = grid.iter().map(|&p| log_interp(&b, p) - log_interp(&a, p)).collect();
    for i in 0..d.len().saturating_sub(1) {
        let (d0, d1) = (d[i], d[i + 1]);
        if d0 == 0.0 && d1 > 0.0 {
            return Some(grid[i]);
        }
        if d0 < 0.0 && d1 >= 0.0 {
            if d1 == 0.0 {
                return Some(grid[i + 1]);
            }
            return Some(grid[i] + (grid[i + 1] - grid[i]) * (-d0) / (d1 - d0));
        }
    }
    None
}

/// Threshold as the median of pairwise crossings of `ln LER(p)`.
///
/// Needs at least two lattice sizes with three points each and overlapping
/// ranges; curves that never cross give [`Threshold::NotFound`].
///
/// ```
/// use qecc_lab::report::{estimate_threshold, Curve};
///
/// let grid = [0.06, 0.08, 0.10, 0.12, 0.14];
/// let c4 = Curve { l: 4, points: grid.iter().map(|&p| (p, p)).collect() };
/// let c6 = Curve { l: 6, points: grid.iter().map(|&p| (p, 2.0 * p - 0.1)).collect() };
/// let t = estimate_threshold(&[c4, c6]).unwrap();
/// assert!((t.value().unwrap() - 0.1).abs() < 1e-12);
/// ```
pub fn estimate_threshold(curves: &[Curve]) -> Result<Threshold> {
    if curves.len() < 2 {
        return Err(invalid("threshold estimation needs at least two lattice sizes"));
    }
    if let Some(c) = curves.iter().find(|c| c.points.len() < 3) {
        return Err(invalid(format!("curve for L = {} has fewer than three points", c.l)));
    }
    let range = |c: &Curve| {
        let ps = c.points.iter().map(|&(p, _)| p);
        (ps.clone().fold(f64::INFINITY, f64::min), ps.fold(f64::NEG_INFINITY, f64::max))
    };
    let lo = curves.iter().map(|c| range(c).0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|c| range(c).1).fold(f64::INFINITY, f64::min);
    if lo >= hi {
        return Err(invalid("curves do not share a range of error rates"));
    }
    let mut sorted: Vec<Curve> = curves.to_vec();
    for c in &mut sorted {
        c.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    sorted.sort_by_key(|c| c.l);
    let mut crossings = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if sorted[i].l == sorted[j].l {
                continue;
            }
            if let Some(p) = pair_crossing(&sorted[i], &sorted[j]) {
                crossings.push(Crossing {
                    l_small: sorted[i].l,
                    l_large: sorted[j].l,
                    p,
                });
            }
        }
    }
    if crossings.is_empty() {
        return Ok(Threshold::NotFound);
    }
    let mut ps: Vec<f64> = crossings.iter().map(|c| c.p).collect();
    ps.sort_by(f64::total_cmp);
    let n = ps.len();
    let median = if n % 2 == 1 { ps[n / 2] } else { 0.5 * (ps[n / 2 - 1] + ps[n / 2]) };
    Ok(Threshold::Found {
        p: median,
        spread: ps[n - 1] - ps[0],
        crossings,
    })
}

/// Parses a channel name as written in reports.
pub fn channel_of(row: &ReportRow) -> Result<Channel> {
    row.channel.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(l: usize, f: impl Fn(f64) -> f64, grid: &[f64]) -> Curve {
        Curve {
            l,
            points: grid.iter().map(|&p| (p, f(p))).collect(),
        }
    }

    #[test]
    fn wilson_reference_values() {
        // Wilson interval for 10 / 100 at 95%.
        let (lo, hi) = wilson(10, 100);
        assert!((lo - 0.055_229_3).abs() < 1e-6, "{lo}");
        assert!((hi - 0.174_366_2).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson(0, 50);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.071_349).abs() < 1e-5, "{hi}");
        assert_eq!(wilson(0, 0), (0.0, 1.0));
    }

    #[test]
    fn common_point_gives_zero_spread() {
        let grid = [0.06, 0.08, 0.10, 0.12, 0.14];
        let curves: Vec<Curve> = [(4, 1.0), (6, 2.0), (8, 3.0)]
            .iter()
            .map(|&(l, s)| line(l, move |p| 0.1 + s * (p - 0.1), &grid))
            .collect();
        match estimate_threshold(&curves).unwrap() {
            Threshold::Found { p, spread, crossings } => {
                assert_eq!(p, 0.1);
                assert_eq!(spread, 0.0);
                assert_eq!(crossings.len(), 3);
            }
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn interpolates_between_grid_points() {
        let grid = [0.07, 0.09, 0.11, 0.13];
        // ln LER is linear in p, so interpolation is exact: crossing where
        // -3 + 10 p = -4 + 20 p.
        let a = line(4, |p| (-3.0 + 10.0 * p).exp(), &grid);
        let b = line(6, |p| (-4.0 + 20.0 * p).exp(), &grid);
        let t = estimate_threshold(&[b, a]).unwrap();
        assert!((t.value().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_crossing_and_invalid_inputs() {
        let grid = [0.05, 0.1, 0.15];
        let a = line(4, |p| p, &grid);
        let b = line(6, |p| p / 2.0, &grid);
        assert_eq!(estimate_threshold(&[a.clone(), b.clone()]).unwrap(), Threshold::NotFound);
        assert!(estimate_threshold(&[a.clone()]).is_err());
        let short = line(6, |p| p, &[0.05, 0.1]);
        assert!(estimate_threshold(&[a.clone(), short]).is_err());
        let disjoint = line(6, |p| p, &[0.2, 0.3, 0.4]);
        assert!(estimate_threshold(&[a, disjoint]).is_err());
    }

    fn arb_row() -> impl Strategy<Value = ReportRow> {
        (1u64..10_000, 0.0f64..1.0, 0.0f64..0.5, 1usize..20, any::<bool>()).prop_map(|(samples, frac, p, l, faulty)| {
            let failures = (samples as f64 * frac) as u64;
            let bits = samples * 32;
            let bit_errors = (bits as f64 * frac / 3.0) as u64;
            let (ber_lo, ber_hi) = wilson(bit_errors, bits);
            let (ler_lo, ler_hi) = wilson(failures, samples);
            ReportRow {
                decoder: "qecct".into(),
                code: "toric".into(),
                l,
                channel: "depolarizing".into(),
                sector: "joint".into(),
                rounds: if faulty { 4 } else { 1 },
                q: if faulty { p / 3.0 } else { 0.0 },
                p,
                samples,
                bits,
                bit_errors,
                ber: bit_errors as f64 / bits as f64,
                ber_lo,
                ber_hi,
                logical_failures: failures,
                ler: failures as f64 / samples as f64,
                ler_lo,
                ler_hi,
            }
        })
    }

    proptest! {
        #[test]
        fn csv_round_trips(rows in proptest::collection::vec(arb_row(), 0..20)) {
            let text = rows_to_csv(&rows);
            prop_assert_eq!(parse_csv(&text).unwrap(), rows);
        }

        #[test]
        fn wilson_contains_the_estimate(n in 1u64..100_000, frac in 0.0f64..=1.0) {
            let k = (n as f64 * frac) as u64;
            let (lo, hi) = wilson(k, n);
            let x = k as f64 / n as f64;
            prop_assert!(lo <= x + 1e-12 && x <= hi + 1e-12);
            prop_assert!(0.0 <= lo && hi <= 1.0);
        }
    }

    #[test]
    fn csv_schema_is_checked() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("decoder,p\nmwpm,0.1\n").is_err());
        let bad = format!("{CSV_HEADER}\nmwpm,toric,4,independent,x,1,0,0.1,10,320,5,0.01,0,1,11,1.1,0,1\n");
        assert!(parse_csv(&bad).is_err());
        let short = format!("{CSV_HEADER}\nmwpm,toric,4\n");
        assert!(parse_csv(&short).is_err());
    }
}
