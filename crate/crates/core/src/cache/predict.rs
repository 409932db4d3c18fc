use std::collections::HashMap;

use serde::Serialize;

use crate::spec::{Bind, SignalDef};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub signal: String,
    pub value: Value,
    pub probability: f64,
}

/// Recency-weighted model of which signal the user moves next, with
/// per-bind candidate values.
#[derive(Clone, Debug)]
pub struct InteractionPredictor {
    /// Decay per interaction step.
    pub alpha: f64,
    /// Slider neighbors considered on each side.
    pub neighbors: usize,
    pub top_k: usize,
    history: Vec<(String, Value, u64)>,
    tick: u64,
}

impl Default for InteractionPredictor {
    fn default() -> Self {
        InteractionPredictor::new(0.5, 2, 8)
    }
}

impl InteractionPredictor {
    pub fn new(alpha: f64, neighbors: usize, top_k: usize) -> InteractionPredictor {
        InteractionPredictor {
            alpha,
            neighbors,
            top_k,
            history: Vec::new(),
            tick: 0,
        }
    }

    pub fn record(&mut self, signal: &str, value: Value) {
        self.tick += 1;
        self.history.push((signal.to_string(), value, self.tick));
    }

    pub fn history(&self) -> &[(String, Value, u64)] {
        &self.history
    }

    /// Candidate next values of `def` given its current value.
    pub fn candidates(&self, def: &SignalDef, current: &Value) -> Vec<Value> {
        match &def.bind {
            Bind::None | Bind::TextRegex => Vec::new(),
            Bind::Slider { min, max, step } => {
                let Some(x) = current.as_f64() else {
                    return Vec::new();
                };
                let mut out = Vec::new();
                for k in 1..=self.neighbors {
                    for v in [x - k as f64 * step, x + k as f64 * step] {
                        if v >= *min && v <= *max {
                            out.push(Value::number(v));
                        }
                    }
                }
                out
            }
            Bind::Select { options } | Bind::Radio { options } => {
                options.iter().filter(|o| *o != current).cloned().collect()
            }
        }
    }

    /// Ranked predictions over `signals` at their `current` values. Signal
    /// mass is proportional to the decayed use count; signals never used
    /// get none unless nothing has been used yet (then mass is uniform).
    pub fn predict(&self, signals: &[SignalDef], current: &HashMap<String, Value>) -> Vec<Prediction> {
        let eligible: Vec<(&SignalDef, Vec<Value>)> = signals
            .iter()
            .map(|d| {
                let cur = current.get(&d.name).unwrap_or(&d.value);
                (d, self.candidates(d, cur))
            })
            .filter(|(_, c)| !c.is_empty())
            .collect();
        if eligible.is_empty() {
            return Vec::new();
        }
        let mut weights: Vec<f64> = eligible
            .iter()
            .map(|(d, _)| {
                self.history
                    .iter()
                    .filter(|(s, _, _)| *s == d.name)
                    .map(|(_, _, t)| self.alpha.powi((self.tick - t) as i32))
                    .sum()
            })
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let total: f64 = weights.iter().sum();
        let mut out = Vec::new();
        for ((d, cands), w) in eligible.iter().zip(&weights) {
            if *w == 0.0 {
                continue;
            }
            let p = w / total / cands.len() as f64;
            for v in cands {
                out.push(Prediction {
                    signal: d.name.clone(),
                    value: v.clone(),
                    probability: p,
                });
            }
        }
        // stable: equal probabilities keep signal and candidate order
        out.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        out.truncate(self.top_k);
        let kept: f64 = out.iter().map(|p| p.probability).sum();
        for p in &mut out {
            p.probability /= kept;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slider() -> SignalDef {
        SignalDef {
            name: "maxbins".into(),
            value: Value::number(10.0),
            bind: Bind::Slider {
                min: 5.0,
                max: 40.0,
                step: 5.0,
            },
        }
    }

    fn radio() -> SignalDef {
        SignalDef {
            name: "gender".into(),
            value: Value::string("all"),
            bind: Bind::Radio {
                options: vec![Value::string("all"), Value::string("men")],
            },
        }
    }

    #[test]
    fn uniform_prior() {
        let p = InteractionPredictor::default().predict(&[slider(), radio()], &HashMap::new());
        assert_eq!(p.len(), 4);
        let slider_mass: f64 = p.iter().filter(|x| x.signal == "maxbins").map(|x| x.probability).sum();
        assert!((slider_mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regex_only_predicts_nothing() {
        let s = SignalDef {
            name: "q".into(),
            value: Value::string(""),
            bind: Bind::TextRegex,
        };
        assert!(InteractionPredictor::default().predict(&[s], &HashMap::new()).is_empty());
    }
}
