//! Evaluation tables: a tab-delimited view with `PSNR/SSIM` cells and a
//! lossless CSV with one row per scene and method.

use serde::{Deserialize, Serialize};
use vdsr_core::QualityScore;

use crate::{CliError, CliResult};

pub const BICUBIC_LABEL: &str = "bicubic";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub method: String,
    pub score: QualityScore,
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    scene: String,
    method: String,
    psnr_db: String,
    ssim: String,
}

/// One line per scene, one column per method in first-seen order.
pub fn render_table(rows: &[EvalRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut scenes: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !scenes.contains(&r.scene.as_str()) {
            scenes.push(&r.scene);
        }
    }
    let mut out = String::from("scene");
    for m in &methods {
        out.push('\t');
        out.push_str(m);
    }
    out.push('\n');
    for s in &scenes {
        out.push_str(s);
        for m in &methods {
            out.push('\t');
            match rows.iter().find(|r| r.scene == *s && r.method == *m) {
                Some(r) => out.push_str(&r.score.to_string()),
                None => out.push('-'),
            }
        }
        out.push('\n');
    }
    out
}

/// Floats are written with `{:?}`, which round-trips exactly; infinity is `inf`.
pub fn render_csv(rows: &[EvalRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRecord {
            scene: r.scene.clone(),
            method: r.method.clone(),
            psnr_db: format!("{:?}", r.score.psnr_db),
            ssim: format!("{:?}", r.score.ssim),
        })
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn parse_csv(text: &str) -> CliResult<Vec<EvalRow>> {
    let num = |field: &str, v: &str| -> CliResult<f64> {
        v.parse()
            .map_err(|_| CliError::Input(format!("bad {field} value '{v}'")))
    };
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<CsvRecord>()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
            Ok(EvalRow {
                score: QualityScore {
                    psnr_db: num("psnr_db", &rec.psnr_db)?,
                    ssim: num("ssim", &rec.ssim)?,
                },
                scene: rec.scene,
                method: rec.method,
            })
        })
        .collect()
}
