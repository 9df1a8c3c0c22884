//! State-value predictors consumed by Bellman targets and lookahead policies.

pub trait ValueFunction: Sync {
    /// Value estimate at `s`. Callers guarantee the dimension.
    fn value(&self, s: &[f64]) -> f64;
}

/// `V ≡ c`, including the zero initialisation of fitted value iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn value(&self, _s: &[f64]) -> f64 {
        self.0
    }
}

/// Adapter for closures.
#[derive(Clone, Copy, Debug)]
pub struct FnValue<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ValueFunction for FnValue<F> {
    fn value(&self, s: &[f64]) -> f64 {
        (self.0)(s)
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn value(&self, s: &[f64]) -> f64 {
        (**self).value(s)
    }
}
