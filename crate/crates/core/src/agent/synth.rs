use std::fmt::Write;

use super::llm::{ChatClient, Role};
use super::questions::Question;
use super::retrieve::{Neighbor, RetrievalBundle};
use super::router::mentioned_variables;
use crate::error::{Error, Result};
use crate::ndcore::stats::median;
use crate::synthgen::{Source, Variable, CLIMATE_NAMES, LAND_COVER_NAMES};

/// Most frequent class, ties to the lowest id.
pub fn mode(classes: impl Iterator<Item = u32>) -> Option<u32> {
    let mut counts = std::collections::BTreeMap::new();
    for c in classes {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let top = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, n)| n == top).map(|(c, _)| c)
}

pub fn class_name(v: Variable, class: u32) -> &'static str {
    let names: &[&str] = if v == Variable::LandCover { &LAND_COVER_NAMES } else { &CLIMATE_NAMES };
    names.get(class as usize).copied().unwrap_or("unknown")
}

/// Median (continuous) or mode (categorical) of one variable.
pub fn summarize(v: Variable, neighbors: &[&Neighbor]) -> Option<f64> {
    if neighbors.is_empty() {
        return None;
    }
    if v.is_categorical() {
        mode(neighbors.iter().map(|n| n.labels.get(v) as u32)).map(f64::from)
    } else {
        Some(median(&neighbors.iter().map(|n| n.labels.get(v)).collect::<Vec<_>>()))
    }
}

fn render_value(v: Variable, x: f64, full: bool) -> String {
    if v.is_categorical() {
        format!("{} (class {})", class_name(v, x as u32), x as u32)
    } else if full {
        format!("{x} {}", v.unit())
    } else {
        format!("{x:.2} {}", v.unit())
    }
}

/// Deterministic answer built from the bundle alone. The context patch is
/// listed when retrieved but never counted in an estimate.
pub fn synthesize_offline(question: &Question, bundle: &RetrievalBundle) -> Result<String> {
    if bundle.groups.is_empty() {
        return Err(Error::invalid("cannot synthesize from an empty bundle"));
    }
    let others = |ns: &'_ [Neighbor]| -> Vec<Neighbor> {
        ns.iter().filter(|n| n.id != bundle.context_patch).cloned().collect()
    };
    let mut out = String::new();
    let (r, c) = bundle.location;
    let _ = writeln!(out, "Question {}: {}", question.id, question.text);
    let _ = writeln!(out, "Context patch {} at grid ({r}, {c}).", bundle.context_patch);
    for g in &bundle.groups {
        let (lo, hi) = g.neighbors.iter().fold((f64::INFINITY, 0f64), |a, n| (a.0.min(n.distance), a.1.max(n.distance)));
        let _ = writeln!(out, "[{}] {} neighbours, squared distance {lo:.4} to {hi:.4}.", g.source, g.neighbors.len());
        let rest = others(&g.neighbors);
        let refs: Vec<&Neighbor> = rest.iter().collect();
        let cells: Vec<String> = Variable::ALL
            .iter()
            .filter_map(|&v| summarize(v, &refs).map(|x| format!("{} {}", v.name(), render_value(v, x, false))))
            .collect();
        if cells.is_empty() {
            let _ = writeln!(out, "  no neighbours besides the context patch");
        } else {
            let _ = writeln!(out, "  {}", cells.join(", "));
        }
    }
    let mut vars = mentioned_variables(&question.text);
    if vars.is_empty() {
        vars = Variable::ALL.to_vec();
    }
    let mut pooled: Vec<Neighbor> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for g in &bundle.groups {
        for n in others(&g.neighbors) {
            if seen.insert(n.id) {
                pooled.push(n);
            }
        }
    }
    let refs: Vec<&Neighbor> = pooled.iter().collect();
    let tags: Vec<&str> = bundle.groups.iter().map(|g| g.source.name()).collect();
    let _ = writeln!(out, "Estimates (distinct retrieved neighbours other than the context patch):");
    for v in vars {
        if let Some(x) = summarize(v, &refs) {
            let _ = writeln!(out, "- {}: {} from [{}]", v.name(), render_value(v, x, true), tags.join(", "));
        }
    }
    Ok(out)
}

pub const SYNTH_SYSTEM: &str = "You answer questions about an environmental site using retrieved neighbour patches. \
Cite the source tag in brackets for every claim and keep the answer under 200 words.";

/// Endpoint synthesis over the same bundle text, or the offline template.
pub fn synthesize(question: &Question, bundle: &RetrievalBundle, client: Option<&dyn ChatClient>) -> Result<String> {
    let evidence = synthesize_offline(question, bundle)?;
    match client {
        None => Ok(evidence),
        Some(c) => c.complete(Role::Synthesizer, SYNTH_SYSTEM, &format!("Retrieved evidence:\n{evidence}")),
    }
}

/// Provenance tags cited in an answer.
pub fn cited_sources(answer: &str) -> Vec<Source> {
    let mut out: Vec<Source> = Vec::new();
    for s in crate::synthgen::Source::ALL {
        let tag = s.name();
        let cited = answer.match_indices(tag).any(|(i, _)| {
            let before = answer[..i].chars().next_back();
            let after = answer[i + tag.len()..].chars().next();
            matches!(before, Some('[') | Some(' ')) && matches!(after, Some(']') | Some(','))
        });
        if cited {
            out.push(s);
        }
    }
    out
}
