use std::io::Write;

use serde::{Deserialize, Serialize};

/// Flat CSV header; the metric columns match the report's JSON keys.
pub const REPORT_COLUMNS: [&str; 13] = [
    "setting_model",
    "clusters",
    "noise_pct",
    "nmi",
    "silhouette",
    "known_acc_post",
    "novel_purity",
    "novel_share",
    "update_time_s",
    "config_hash",
    "dataset_id",
    "seed",
    "clusterer",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_id: String,
    pub seed: u64,
    pub clusterer: String,
}

/// One result row. Metrics that do not apply to a run are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub setting_model: String,
    #[serde(rename = "clusters")]
    pub n_clusters: Option<usize>,
    pub noise_pct: Option<f64>,
    pub nmi: Option<f64>,
    pub silhouette: Option<f64>,
    #[serde(rename = "known_acc_post")]
    pub known_accuracy_post: Option<f64>,
    pub novel_purity: Option<f64>,
    pub novel_share: Option<f64>,
    pub update_time_s: Option<f64>,
    pub provenance: Provenance,
}

impl EvaluationReport {
    /// Copy with wall-time fields cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        EvaluationReport { update_time_s: None, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<'a>(w: impl Write, reports: impl IntoIterator<Item = &'a EvaluationReport>) -> csv::Result<()> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_COLUMNS)?;
        for r in reports {
            wtr.write_record([
                r.setting_model.clone(),
                opt(&r.n_clusters),
                opt(&r.noise_pct),
                opt(&r.nmi),
                opt(&r.silhouette),
                opt(&r.known_accuracy_post),
                opt(&r.novel_purity),
                opt(&r.novel_share),
                opt(&r.update_time_s),
                r.provenance.config_hash.clone(),
                r.provenance.dataset_id.clone(),
                r.provenance.seed.to_string(),
                r.provenance.clusterer.clone(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
