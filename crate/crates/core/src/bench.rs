//! Attention-cost benchmark: closed-form and instrumented MAC counts plus
//! wall-clock time for each attention mode over a grid of shapes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::ctm::{count_ops, AttentionMode, CtmConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchPoint {
    pub w: usize,
    pub h: usize,
    pub t: usize,
    pub c: usize,
    pub p: usize,
    pub m: usize,
    pub s: usize,
    pub b: usize,
    pub heads: usize,
}

impl BenchPoint {
    pub fn config(&self) -> CtmConfig {
        CtmConfig {
            channels: self.c,
            heads: self.heads,
            window: (self.p, self.m),
            group: (self.s, self.b),
            ..CtmConfig::default()
        }
    }

    /// Parses `W,H,T,C,P,M,S,B[,heads]`.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("bad grid point {text:?}")))?;
        match v[..] {
            [w, h, t, c, p, m, s, b] => Ok(Self { w, h, t, c, p, m, s, b, heads: 4 }),
            [w, h, t, c, p, m, s, b, heads] => Ok(Self { w, h, t, c, p, m, s, b, heads }),
            _ => Err(Error::config(format!(
                "grid point {text:?} needs W,H,T,C,P,M,S,B[,heads]"
            ))),
        }
    }
}

fn pt(w: usize, h: usize, t: usize, c: usize, p: usize, m: usize, s: usize, b: usize) -> BenchPoint {
    BenchPoint { w, h, t, c, p, m, s, b, heads: 4 }
}

/// Twelve points, including the `S = P, B = M` case with `7×7×2` windows.
pub fn default_grid() -> Vec<BenchPoint> {
    vec![
        pt(8, 8, 4, 8, 4, 2, 4, 2),
        pt(8, 8, 4, 8, 2, 2, 4, 2),
        pt(8, 8, 8, 8, 4, 4, 4, 4),
        pt(16, 16, 4, 8, 4, 2, 4, 2),
        pt(16, 8, 4, 8, 4, 2, 2, 2),
        pt(16, 16, 4, 8, 4, 2, 8, 4),
        pt(12, 12, 4, 8, 3, 2, 3, 2),
        pt(14, 14, 2, 8, 7, 2, 7, 2),
        pt(8, 8, 2, 16, 4, 1, 2, 2),
        pt(16, 16, 4, 16, 8, 2, 4, 4),
        pt(6, 6, 4, 4, 3, 2, 3, 2),
        pt(16, 16, 2, 8, 8, 2, 8, 2),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub point: BenchPoint,
    pub mode: AttentionMode,
    pub analytic: u64,
    pub measured: u64,
    pub runtime_s: f64,
}

impl BenchRow {
    pub fn name(&self) -> String {
        let p = &self.point;
        format!("{}x{}x{}_c{}", p.w, p.h, p.t, p.c)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    /// Points skipped because a grouping does not tile the volume.
    pub skipped: Vec<String>,
}

pub fn bench_attention(grid: &[BenchPoint]) -> BenchOutput {
    let mut out = BenchOutput::default();
    for point in grid {
        let cfg = point.config();
        let mut rows = Vec::new();
        let result = AttentionMode::ALL.iter().try_for_each(|&mode| {
            let start = Instant::now();
            let r = count_ops(&cfg, point.w, point.h, point.t, point.c, mode)?;
            rows.push(BenchRow {
                point: *point,
                mode,
                analytic: r.analytic,
                measured: r.measured,
                runtime_s: start.elapsed().as_secs_f64(),
            });
            Ok::<_, Error>(())
        });
        match result {
            Ok(()) => out.rows.extend(rows),
            Err(e) => out.skipped.push(format!("{point:?}: {e}")),
        }
    }
    out
}

pub const BENCH_HEADER: &str = "name,W,H,T,C,P,M,S,B,heads,mode,analytic,measured,equal,runtime_s";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        let p = &r.point;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.name(),
            p.w,
            p.h,
            p.t,
            p.c,
            p.p,
            p.m,
            p.s,
            p.b,
            p.heads,
            r.mode.name(),
            r.analytic,
            r.measured,
            r.analytic == r.measured,
            r.runtime_s
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_row_counts_agree() {
        let out = bench_attention(&[pt(8, 8, 4, 8, 4, 2, 4, 2)]);
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows.iter().all(|r| r.analytic == r.measured));
    }

    #[test]
    fn full_to_window_ratio_grows_with_volume() {
        let cfg = pt(0, 0, 0, 8, 4, 2, 4, 2).config();
        let ratio = |w, h, t| {
            crate::ctm::analytic_ops(&cfg, w, h, t, 8, AttentionMode::Fsa) as f64
                / crate::ctm::analytic_ops(&cfg, w, h, t, 8, AttentionMode::Bda) as f64
        };
        assert!(ratio(16, 16, 4) > ratio(8, 8, 4));
        assert!(ratio(32, 32, 4) > ratio(16, 16, 4));
    }

    #[test]
    fn non_tiling_points_are_skipped() {
        let out = bench_attention(&[pt(8, 8, 4, 8, 3, 2, 4, 2), pt(6, 6, 4, 4, 3, 2, 3, 2)]);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.rows.len(), 3);
    }

    #[test]
    fn grid_point_parsing() {
        assert_eq!(BenchPoint::parse("8,8,4,8,4,2,4,2").unwrap(), pt(8, 8, 4, 8, 4, 2, 4, 2));
        assert_eq!(BenchPoint::parse("8,8,4,8,4,2,4,2,2").unwrap().heads, 2);
        assert!(BenchPoint::parse("8,8").is_err());
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let out = bench_attention(&[pt(6, 6, 4, 4, 3, 2, 3, 2)]);
        let csv = bench_csv(&out.rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
    }
}
