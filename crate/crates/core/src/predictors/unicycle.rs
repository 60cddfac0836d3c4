use crate::error::Result;
use crate::signals::InputHistory;

use super::{check_len, half_step, simpson};

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Closed-form predictor for the kinematic unicycle.
///
/// On a block of length `L` with held `(v, ω)` and heading `θa` at its start,
/// `Δx = v L cos(θa + ωL/2) sinc(ωL/2)` and likewise `Δy` with `sin`; the
/// `ω = 0` limit is the straight segment `v L cos θa`. Steps whose inputs vary
/// inside the step use Simpson's rule.
pub fn unicycle_predict(pose: &[f64], hist: &InputHistory) -> Result<Vec<f64>> {
    check_len(pose.len(), 3)?;
    check_len(hist.dim(), 2)?;
    let h = hist.h();
    let (mut x, mut y, mut th) = (pose[0], pose[1], pose[2]);
    for run in hist.runs() {
        let seg = hist.segment(run.first);
        if run.constant {
            let (v, w) = (seg.left[0], seg.left[1]);
            let span = run.count as f64 * h;
            let half = 0.5 * w * span;
            let chord = v * span * sinc(half);
            x += chord * (th + half).cos();
            y += chord * (th + half).sin();
            th += w * span;
        } else {
            let (wl, wm, wr) = (seg.left[1], seg.mid[1], seg.right[1]);
            let th_m = th + half_step(h, wl, wm, wr);
            let th_r = th + simpson(h, wl, wm, wr);
            let (vl, vm, vr) = (seg.left[0], seg.mid[0], seg.right[0]);
            x += simpson(h, vl * th.cos(), vm * th_m.cos(), vr * th_r.cos());
            y += simpson(h, vl * th.sin(), vm * th_m.sin(), vr * th_r.sin());
            th = th_r;
        }
    }
    Ok(vec![x, y, th])
}
