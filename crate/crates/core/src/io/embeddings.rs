use std::path::Path;

use crate::error::Result;
use crate::model::ModelParams;
use crate::train::{score_example, Example};

/// CSV with one row per example: `recording_id,k,label,e0..e{d-1}`.
/// Values use the shortest round-trip representation, so parsing the file
/// recovers the embeddings exactly.
pub fn embeddings_csv(params: &ModelParams, examples: &[Example]) -> Result<String> {
    let d = params.config.proj_len;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["recording_id".to_string(), "k".into(), "label".into()];
    header.extend((0..d).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for ex in examples {
        let (score, _) = score_example(params, ex)?;
        let mut row = vec![
            ex.recording_id.to_string(),
            ex.frame_index.to_string(),
            ex.label.to_string(),
        ];
        row.extend(score.embedding.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Manifest(e.to_string())
}

pub fn export_embeddings(params: &ModelParams, examples: &[Example], out_path: &Path) -> Result<()> {
    super::write_atomic(out_path, embeddings_csv(params, examples)?.as_bytes())
}
