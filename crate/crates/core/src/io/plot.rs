//! Gnuplot script emission. Data is inlined as named datablocks so the
//! script runs on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::results::{format_sig9, CsvRow};
use super::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureKind {
    /// MAE vs SNR, one curve per (M, N_batch).
    Fig3,
    /// MAE vs SNR, one curve per tap count.
    Fig4,
    /// Latency vs N_batch, one curve per PN length.
    Fig5,
    /// Latency vs N_batch, one curve per MIMO scale.
    Fig6,
}

impl FigureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FigureKind::Fig3 => "fig3",
            FigureKind::Fig4 => "fig4",
            FigureKind::Fig5 => "fig5",
            FigureKind::Fig6 => "fig6",
        }
    }

    fn is_latency(&self) -> bool {
        matches!(self, FigureKind::Fig5 | FigureKind::Fig6)
    }
}

impl FromStr for FigureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3" => Ok(FigureKind::Fig3),
            "fig4" => Ok(FigureKind::Fig4),
            "fig5" => Ok(FigureKind::Fig5),
            "fig6" => Ok(FigureKind::Fig6),
            _ => Err(format!("unknown figure {s:?} (expected fig3, fig4, fig5 or fig6)")),
        }
    }
}

fn curve_label(kind: FigureKind, r: &CsvRow, multi_scale: bool, multi_m: bool) -> (Vec<usize>, String) {
    let scale = format!("{}x{}", r.nt, r.nr);
    let (mut key, mut label) = match kind {
        FigureKind::Fig3 => (vec![r.m, r.n_batch], format!("M={}, N_batch={}", r.m, r.n_batch)),
        FigureKind::Fig4 => (vec![r.l_nz, r.m, r.n_batch], format!("L_nz={}", r.l_nz)),
        FigureKind::Fig5 => (vec![r.m], format!("M={}", r.m)),
        FigureKind::Fig6 => (vec![r.nt, r.nr], scale.clone()),
    };
    if multi_scale && kind != FigureKind::Fig6 {
        key.splice(0..0, [r.nt, r.nr]);
        label = format!("{scale} {label}");
    }
    if multi_m && kind == FigureKind::Fig6 {
        key.push(r.m);
        label = format!("{label} M={}", r.m);
    }
    (key, label)
}

/// Build a gnuplot script for `kind` from parsed CSV rows. Rows lacking the
/// needed columns are a schema error; no rows gives a script with no curves.
pub fn emit_plot_script(rows: &[CsvRow], kind: FigureKind) -> Result<String, FormatError> {
    for (i, r) in rows.iter().enumerate() {
        let ok = if kind.is_latency() {
            r.latency_s.is_some()
        } else {
            r.mae.is_some() && r.snr_db.is_some()
        };
        if !ok {
            let need = if kind.is_latency() { "latency_s" } else { "mae and snr_db" };
            return Err(FormatError::SchemaMismatch {
                line: i as u64 + 2,
                message: format!("{} needs {need}", kind.name()),
            });
        }
    }
    let multi_scale = rows.iter().any(|r| (r.nt, r.nr) != (rows[0].nt, rows[0].nr));
    let multi_m = rows.iter().any(|r| r.m != rows[0].m);

    type Curve = (String, Vec<(f64, f64)>);
    let mut curves: BTreeMap<Vec<usize>, Curve> = BTreeMap::new();
    for r in rows {
        let (key, label) = curve_label(kind, r, multi_scale, multi_m);
        let point = if kind.is_latency() {
            (r.n_batch as f64, r.latency_s.unwrap() * 1e3)
        } else {
            (r.snr_db.unwrap(), r.mae.unwrap())
        };
        curves.entry(key).or_insert_with(|| (label, Vec::new())).1.push(point);
    }

    let mut s = String::new();
    let name = kind.name();
    let _ = writeln!(s, "# generated by pnce plot --figure {name}");
    let _ = writeln!(s, "set terminal svg size 800,600 dynamic");
    let _ = writeln!(s, "set output '{name}.svg'");
    let _ = writeln!(s, "set grid");
    let _ = writeln!(s, "set key outside right");
    if kind.is_latency() {
        let _ = writeln!(s, "set xlabel 'N_batch'");
        let _ = writeln!(s, "set ylabel 'latency per frame (ms)'");
        let _ = writeln!(s, "set logscale x 2");
    } else {
        let _ = writeln!(s, "set xlabel 'SNR (dB)'");
        let _ = writeln!(s, "set ylabel 'MAE'");
        let _ = writeln!(s, "set logscale y");
        let _ = writeln!(s, "set format y '10^{{%L}}'");
    }
    for (i, (_, (label, pts))) in curves.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let _ = writeln!(s, "# {label}");
        let _ = writeln!(s, "$d{i} << EOD");
        for (x, y) in pts.iter() {
            let _ = writeln!(s, "{} {}", format_sig9(*x), format_sig9(*y));
        }
        let _ = writeln!(s, "EOD");
    }
    if curves.is_empty() {
        let _ = writeln!(s, "# no data rows");
        let _ = writeln!(s, "set label 1 'no data' at graph 0.5, graph 0.5 center");
        let _ = writeln!(s, "set xrange [0:1]");
        let _ = writeln!(s, "set yrange [1:10]");
        let _ = writeln!(s, "plot NaN notitle");
    } else {
        let items: Vec<String> = curves
            .values()
            .enumerate()
            .map(|(i, (label, _))| format!("$d{i} using 1:2 with linespoints title '{label}'"))
            .collect();
        let _ = writeln!(s, "plot {}", items.join(", \\\n     "));
    }
    Ok(s)
}
