//! Plain-text rendering of study tables.

use std::fmt::Write;

use crate::interpret::studies::{DeactivationTable, RegionTable};

pub fn render_deactivation(t: &DeactivationTable) -> String {
    let bins = t.phi_original.len();
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "dir");
    for i in 0..bins {
        let _ = write!(s, " {:>8}", format!("dphi{i}"));
    }
    let _ = writeln!(s, " {:>8}", "dPhi");
    for r in &t.rows {
        let _ = write!(s, "{:>8}", format!("d{}", r.direction));
        for d in &r.delta {
            let _ = write!(s, " {d:>8.3}");
        }
        let _ = writeln!(s, " {:>8.3}", r.delta_total);
    }
    let _ = write!(s, "{:>8}", "phi");
    for p in &t.phi_original {
        let _ = write!(s, " {p:>8.3}");
    }
    let _ = writeln!(s, " {:>8.3}", t.total_original);
    let _ = writeln!(s, "videos {}, h_norm {:.3} px/frame", t.videos, t.h_norm);
    s
}

pub fn render_region(t: &RegionTable) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>8}", "dir");
    for r in &t.regions {
        let _ = write!(s, " {:>12}", format!("dPhi_{r}"));
    }
    if let Some(first) = t.rows.first() {
        for (name, _) in &first.differences {
            let _ = write!(s, " {name:>14}");
        }
    }
    s.push('\n');
    for row in &t.rows {
        let _ = write!(s, "{:>8}", format!("d{}", row.direction));
        for d in &row.delta {
            let _ = write!(s, " {d:>12.3}");
        }
        for (_, d) in &row.differences {
            let _ = write!(s, " {d:>14.3}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "h_norm {:.3} px/frame", t.h_norm);
    s
}
