use super::params::{Binder, ParamStore};
use super::unet::DenoiserModel;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Records a scalar loss over `store` and returns `(loss, grads)`, with a
/// gradient tensor for every parameter. Parameters the loss never touched
/// get exact zeros.
pub fn gradients_of<'a, F>(store: &'a ParamStore, build: F) -> Result<(f64, ParamStore)>
where
    F: FnOnce(&mut Tape<'a>, &mut Binder<'a>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut binder = Binder::new(store, true);
    let out = build(&mut tape, &mut binder)?;
    let loss = tape.scalar(out);
    if !loss.is_finite() {
        return Err(Error::Numerical {
            name: "loss".into(),
        });
    }
    let mut grads = tape.backward(out);
    let mut result = store.zeros_like();
    for (name, var) in binder.bound() {
        if let Some(g) = grads.take(var) {
            if !g.is_finite() {
                return Err(Error::Numerical {
                    name: format!("gradient of {name}"),
                });
            }
            *result.get_mut(name).expect("bound parameter is registered") = g;
        }
    }
    Ok((loss, result))
}

/// [`gradients_of`] over a model's parameters.
pub fn gradients<'a, F>(model: &'a DenoiserModel, build: F) -> Result<(f64, ParamStore)>
where
    F: FnOnce(&mut Tape<'a>, &mut Binder<'a>) -> Result<Var>,
{
    gradients_of(model.params(), build)
}
