//! History CSV emission. Every configuration flag is echoed as `# key = value`
//! header lines so a result file is self-describing.

use std::fs;
use std::io::Write;
use std::path::Path;

use fedpoint_core::fed::EpochRow;

pub fn write_history(
    path: &Path,
    flags: &[(String, String)],
    rows: &[EpochRow],
) -> std::io::Result<()> {
    let mut out = String::new();
    for (k, v) in flags {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("epoch,site,loss_cls,loss_aux,mask_rate,val_auc\n");
    for r in rows {
        let val = r.val_auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.4},{}\n",
            r.epoch, r.site, r.loss_cls, r.loss_aux, r.mask_rate, val
        ));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

/// Simple CSV for evaluation reports: one row per (site, split).
pub fn write_eval_csv(
    path: &Path,
    flags: &[(String, String)],
    rows: &[(String, String, Option<f64>)],
) -> std::io::Result<()> {
    let mut out = String::new();
    for (k, v) in flags {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("site,split,auc\n");
    for (site, split, auc) in rows {
        let a = auc.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
        out.push_str(&format!("{site},{split},{a}\n"));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())
}
