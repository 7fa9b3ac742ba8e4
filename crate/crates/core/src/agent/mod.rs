//! Routing, retrieval, synthesis and the three-condition evaluation.
//!
//! Everything runs offline by default: a keyword and capability router, a
//! template synthesizer and a heuristic judge. An external chat endpoint can
//! stand in for any of the three.

pub mod eval;
pub mod judge;
pub mod llm;
pub mod questions;
pub mod retrieve;
pub mod router;
pub mod stats;
pub mod synth;

pub use eval::{evaluate, Condition, EvalConfig, EvalInputs, EvalReport, Judge, Router, CONTRASTS, TIE_THRESHOLD};
pub use judge::{judge_heuristic, judge_llm, JudgeScore, Rubric, RubricWeights};
pub use llm::{ChatClient, EndpointConfig, HttpChatClient, Role};
pub use questions::{builtin_questions, load_questions, save_questions, Category, Question};
pub use retrieve::{context_patch, retrieve, Neighbor, ProvenanceGroup, RetrievalBundle};
pub use router::{hit_rate, route_llm, route_rules, Plan};
pub use stats::{cohens_d, cohens_d_deltas, paired_bootstrap_p};
pub use synth::{synthesize, synthesize_offline};
