//! Dormand–Prince 5(4) tableau, a single trial step and the 4th-order
//! continuous extension.

use crate::hybrid_ode::HybridModel;

pub const STAGES: usize = 7;

pub const C: [f64; STAGES] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

pub const A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// 5th-order weights. The last stage is the FSAL evaluation at the new point.
pub const B: [f64; STAGES] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Difference between the 5th- and 4th-order weights.
pub const E: [f64; STAGES] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Coefficients of the continuous extension: the weight of stage `i` at
/// fraction `s` of the step is `sum_p P[i][p] * s^(p+1)`.
pub const P: [[f64; 4]; STAGES] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

/// Stage weights of the continuous extension at step fraction `s`.
pub fn dense_weights(s: f64) -> [f64; STAGES] {
    let mut w = [0.0; STAGES];
    for (wi, row) in w.iter_mut().zip(P.iter()) {
        let mut acc = 0.0;
        let mut pow = s;
        for &coef in row {
            acc += coef * pow;
            pow *= s;
        }
        *wi = acc;
    }
    w
}

/// `x0 + h * sum_i w_i k_i`, evaluated componentwise in a fixed order.
pub fn combine(x0: &[f64], h: f64, w: &[f64; STAGES], k: &[Vec<f64>]) -> Vec<f64> {
    (0..x0.len())
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..STAGES {
                acc += w[i] * k[i][j];
            }
            x0[j] + h * acc
        })
        .collect()
}

/// Stage inputs `x0 + h * sum_{j<i} a_ij k_j`.
pub fn stage_state(x0: &[f64], h: f64, i: usize, k: &[Vec<f64>]) -> Vec<f64> {
    (0..x0.len())
        .map(|c| {
            let mut acc = 0.0;
            for j in 0..i {
                acc += A[i][j] * k[j][c];
            }
            x0[c] + h * acc
        })
        .collect()
}

/// All quantities of one trial step.
#[derive(Debug, Clone)]
pub struct TrialStep {
    pub stage_times: [f64; STAGES],
    pub stage_states: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub x_new: Vec<f64>,
    pub finite: bool,
}

/// Evaluates stages 2..7 given the first stage `k1 = f(t, x0)`. The last
/// stage is evaluated at `t_new`, which may differ from `t + h` by rounding
/// when the step was clipped onto a scheduled time.
pub fn trial_step<M: HybridModel + ?Sized>(
    model: &M,
    t: f64,
    t_new: f64,
    x0: &[f64],
    xd: &[f64],
    h: f64,
    k1: &[f64],
) -> TrialStep {
    let n = x0.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(STAGES);
    let mut stage_states = Vec::with_capacity(STAGES);
    let mut stage_times = [0.0; STAGES];
    k.push(k1.to_vec());
    stage_states.push(x0.to_vec());
    stage_times[0] = t;
    let mut finite = k1.iter().all(|v| v.is_finite());
    for i in 1..STAGES - 1 {
        let ti = t + C[i] * h;
        let yi = stage_state(x0, h, i, &k);
        let mut ki = vec![0.0; n];
        model.derivative(ti, &yi, xd, &mut ki);
        finite &= ki.iter().all(|v| v.is_finite());
        stage_times[i] = ti;
        stage_states.push(yi);
        k.push(ki);
    }
    // the 7th stage input is the 5th-order solution itself
    let x_new = stage_state(x0, h, STAGES - 1, &k);
    let mut k7 = vec![0.0; n];
    model.derivative(t_new, &x_new, xd, &mut k7);
    finite &= k7.iter().all(|v| v.is_finite()) && x_new.iter().all(|v| v.is_finite());
    stage_times[STAGES - 1] = t_new;
    stage_states.push(x_new.clone());
    k.push(k7);
    TrialStep {
        stage_times,
        stage_states,
        k,
        x_new,
        finite,
    }
}

/// RMS of the embedded error estimate scaled by the mixed tolerance.
pub fn error_norm(
    x0: &[f64],
    x1: &[f64],
    k: &[Vec<f64>],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let n = x0.len();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for c in 0..n {
        let mut e = 0.0;
        for i in 0..STAGES {
            e += E[i] * k[i][c];
        }
        let sc = abs_tol + rel_tol * x0[c].abs().max(x1[c].abs());
        let r = h * e / sc;
        sum += r * r;
    }
    (sum / n as f64).sqrt()
}
