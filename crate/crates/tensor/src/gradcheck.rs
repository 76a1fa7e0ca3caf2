//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it is used to verify.

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Gradients smaller than this are compared in absolute terms. Central
    /// differences at the default step cannot resolve much below 1e-9 once
    /// the loss sums many rounded terms, so exactly-zero gradients (e.g. a
    /// key bias under softmax) would otherwise report pure noise.
    pub floor: f64,
    /// Upper bound on checked entries per parameter tensor (evenly strided).
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-5, max_entries: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (parameter, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn rel_err(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }

    /// `loss_fn` must build a scalar loss on a fresh tape and be a pure
    /// function of the parameter values (fix any dropout seed inside it).
    pub fn run<F>(&self, store: &mut ParamStore, mut loss_fn: F) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    {
        store.zero_grad();
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        tape.backward(loss, store)?;
        drop(tape);

        let mut eval = |store: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let l = loss_fn(&mut tape, store)?;
            Ok(tape.value(l).data()[0])
        };

        let mut report = GradCheckReport::default();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.get(id).trainable {
                continue;
            }
            let n = store.get(id).value.len();
            let picks: Vec<usize> = match self.max_entries {
                Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
                _ => (0..n).collect(),
            };
            for i in picks {
                let orig = store.get(id).value.data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + self.step;
                let plus = eval(store)?;
                store.get_mut(id).value.data_mut()[i] = orig - self.step;
                let minus = eval(store)?;
                store.get_mut(id).value.data_mut()[i] = orig;

                let numeric = (plus - minus) / (2.0 * self.step);
                let analytic = store.get(id).grad.data()[i];
                let err = self.rel_err(analytic, numeric);
                report.checked += 1;
                if err >= report.max_rel_err || report.worst.is_none() {
                    report.max_rel_err = report.max_rel_err.max(err);
                    report.worst = Some((store.get(id).name.clone(), i, analytic, numeric));
                }
            }
        }
        Ok(report)
    }
}
