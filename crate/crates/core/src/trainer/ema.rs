use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Scalar};

/// `θ_t ← α θ_t + (1 − α) θ_s`, elementwise.
pub fn ema_update<T: Scalar>(teacher: &mut ParamSet<T>, student: &ParamSet<T>, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} not in [0, 1]")));
    }
    if !teacher.congruent(student) {
        return Err(Error::invalid("ema", "teacher and student parameters differ in layout"));
    }
    teacher.ensure_mutable()?;
    let (a, b) = (T::of(alpha), T::of(1.0 - alpha));
    for (t, s) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = a * *tv + b * sv;
        }
    }
    Ok(())
}
