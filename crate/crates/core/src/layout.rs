//! File names shared by the producers and consumers of run directories.

/// Teacher run: full-graph logits, `n` rows by `C` columns.
pub const TEACHER_LOGITS: &str = "teacher_logits.csv";
/// Teacher run (GAT): head-averaged layer-1 coefficients, `u,v,alpha`.
pub const ATTENTION: &str = "attention_layer1.csv";
/// Teacher run (GAT): per-head layer-1 scores and coefficients.
pub const ATTENTION_HEADS: &str = "attention_heads_layer1.csv";
/// Distillation run: the augmented graph in the dataset format.
pub const AUGMENTED_DIR: &str = "augmented";
/// Distillation run: student logits on the augmented graph.
pub const STUDENT_LOGITS: &str = "student_logits.csv";
pub const HISTORY: &str = "history.json";
pub const METRICS: &str = "metrics.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
