use crate::error::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

/// Maps a time onto an integer multiple of `step`, refusing anything off the grid.
pub(crate) fn grid_index(what: &'static str, value: f64, step: f64) -> Result<usize> {
    let ratio = value / step;
    let index = ratio.round();
    if !ratio.is_finite() || index < 0.0 || (ratio - index).abs() > ALIGN_TOL * index.max(1.0) {
        return Err(Error::Alignment { what, value, step });
    }
    Ok(index as usize)
}

/// Number of grid steps per delay for a step `dt`.
pub(crate) fn delay_steps(delay: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time step must be > 0, got {dt}"
        )));
    }
    let d = grid_index("delay", delay, dt)?;
    if d == 0 {
        return Err(Error::Alignment {
            what: "delay",
            value: delay,
            step: dt,
        });
    }
    Ok(d)
}
