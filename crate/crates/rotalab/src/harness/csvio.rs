//! Pinned CSV dialect: comma separators, '.' decimals, 17 significant
//! digits for doubles, LF line endings. Formatting is locale-free, so equal
//! inputs always produce identical bytes.

use std::fmt::Write as _;

use crate::optimizers::Trajectory;

/// 17 significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV line from already-formatted fields.
pub fn line(fields: &[String]) -> String {
    let mut out = fields.join(",");
    out.push('\n');
    out
}

pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from("step,loss,grad_inf_norm\n");
    for record in &trajectory.records {
        let _ = writeln!(
            out,
            "{},{},{}",
            record.step,
            format_f64(record.loss),
            format_f64(record.grad_inf_norm)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::StepRecord;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(1.0), "1.0000000000000000e0");
        assert_eq!(format_f64(-0.5), "-5.0000000000000000e-1");
        // round trips exactly
        let x = std::f64::consts::PI * 1e-7;
        let s = format_f64(x);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn trajectory_rows_use_lf_only() {
        let mut t = Trajectory::default();
        t.records.push(StepRecord {
            step: 1,
            loss: 0.25,
            grad_inf_norm: 2.0,
        });
        let csv = trajectory_csv(&t);
        assert!(csv.ends_with('\n'));
        assert!(!csv.contains('\r'));
        assert_eq!(csv.lines().count(), 2);
    }
}
