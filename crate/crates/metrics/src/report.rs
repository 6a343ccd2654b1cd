use crate::quality::mps;

/// One evaluated image under one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub mps: Option<f64>,
}

impl EvalRow {
    /// MPS is derived from LPIPS and present exactly when LPIPS is.
    pub fn new(method: &str, image: &str, psnr: f64, ssim: f64, lpips: Option<f64>) -> Self {
        EvalRow {
            method: method.to_string(),
            image: image.to_string(),
            psnr,
            ssim,
            lpips,
            mps: lpips.map(|l| mps(ssim, l)),
        }
    }
}

/// Per-image scores plus derived per-method means.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(seed: u64) -> Self {
        EvalReport { seed, rows: Vec::new() }
    }

    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    /// Methods in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.method) {
                seen.push(row.method.clone());
            }
        }
        seen
    }

    /// One "mean" row per method. LPIPS/MPS means appear only when every
    /// row of the method carries them.
    pub fn mean_rows(&self) -> Vec<EvalRow> {
        self.methods()
            .into_iter()
            .map(|method| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == method).collect();
                let n = rows.len() as f64;
                let psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
                let ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
                let lpips = rows
                    .iter()
                    .map(|r| r.lpips)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / n);
                EvalRow::new(&method, "mean", psnr, ssim, lpips)
            })
            .collect()
    }

    /// CSV with a seed header comment, per-image rows, then mean rows.
    /// Infinite PSNR serializes as "inf".
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={}\nmethod,image,psnr,ssim,lpips,mps\n", self.seed);
        for row in self.rows.iter().chain(&self.mean_rows()) {
            let lpips = row.lpips.map(|v| v.to_string()).unwrap_or_default();
            let mps = row.mps.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.method, row.image, row.psnr, row.ssim, lpips, mps
            ));
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<16} {:>9} {:>8} {:>8} {:>8}   (seed {})\n",
            "method", "image", "psnr", "ssim", "lpips", "mps", self.seed
        );
        for row in self.rows.iter().chain(&self.mean_rows()) {
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<10} {:<16} {:>9.4} {:>8.4} {:>8} {:>8}\n",
                row.method,
                row.image,
                row.psnr,
                row.ssim,
                fmt_opt(row.lpips),
                fmt_opt(row.mps),
            ));
        }
        out
    }
}
