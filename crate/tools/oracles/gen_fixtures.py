#!/usr/bin/env python3
"""Independent extended-precision oracles for the eoslab test fixtures.

Every value here is computed with mpmath at 50 significant digits from the
closed-form definitions (or from mpmath's own numerical differentiation and
root finding), never from the Rust code paths. The output is frozen into
crates/core/tests/fixtures/oracles.json and checked by the Rust test suites.

    python3 tools/oracles/gen_fixtures.py > crates/core/tests/fixtures/oracles.json
"""

import json
import sys

import mpmath as mp

mp.mp.dps = 50


def s(x):
    return mp.nstr(mp.mpf(x), 30, strip_zeros=False)


# ratio functions r, written straight from their definitions
def r_logcosh(p):
    return mp.mpf(1) if p == 0 else mp.tanh(p) / p


def r_sqrt(p):
    return 1 / mp.sqrt(1 + p * p)


def r_tanh_act(z):
    return mp.mpf(1) if z == 0 else mp.tanh(z) * mp.sech(z) ** 2 / z


def dr(r, z):
    return mp.diff(r, z)


def sup_ratio(r, threshold, lo=mp.mpf("1e-6"), hi=mp.mpf(50)):
    g = lambda z: z * dr(r, z) / r(z) - threshold
    if g(hi) > 0:
        return mp.inf
    return mp.findroot(g, (lo, hi), solver="bisect", tol=mp.mpf("1e-40"))


def r_hat(r, q):
    if q == 1:
        return mp.mpf(0)
    return mp.findroot(lambda p: r(p) - q, (mp.mpf("1e-30"), mp.mpf(1000)), solver="bisect", tol=mp.mpf("1e-40"))


def h_linear(r, r2, p):
    if p == 0:
        return -1 / (2 * r2)
    rp = dr(r, p)
    return -(p * r(p) ** 3 / rp + p * p * r(p) ** 2) / 2


def h_nonlinear(r, r2, phi, p):
    if p == 0:
        return -1 / r2
    return -phi(p) ** 2 * r(p) / (p * dr(r, p))


out = {}

# series coefficients of r at zero: r(p) = c0 + c1 p + c2 p^2 + ...
series = {}
numerators = {
    "log-cosh": lambda z: mp.tanh(z),
    "tanh": lambda z: mp.tanh(z) * mp.sech(z) ** 2,
    "square-root": lambda z: z / mp.sqrt(1 + z * z),
}
for name, g in numerators.items():
    # r(z) = g(z)/z with g odd and analytic, so the series of r is the series of g shifted by one
    gc = mp.taylor(g, mp.mpf(0), 5)
    series[name] = {
        "r2_at_zero": s(2 * gc[3]),
        "r4_at_zero": s(24 * gc[5]),
    }
out["series"] = series

R = {"log-cosh": r_logcosh, "square-root": r_sqrt, "tanh": r_tanh_act}
R2 = {k: mp.mpf(v["r2_at_zero"]) for k, v in series.items()}

out["r_eval"] = {
    "square_root_at_sqrt3": s(r_sqrt(mp.sqrt(3))),
    "tanh_at_1": s(mp.tanh(1) * mp.sech(1) ** 2),
}

out["r_hat"] = {
    "square_root_at_half": s(r_hat(r_sqrt, mp.mpf("0.5"))),
    "log_cosh_at_0p9": s(r_hat(r_logcosh, mp.mpf("0.9"))),
    "log_cosh_at_0p8": s(r_hat(r_logcosh, mp.mpf("0.8"))),
    "tanh_at_half": s(r_hat(r_tanh_act, mp.mpf("0.5"))),
}

grid = [mp.mpf(-10) + mp.mpf(i) / 100 for i in range(2001)]
h_tanh_grid = [h_nonlinear(r_tanh_act, R2["tanh"], mp.tanh, p) for p in grid]
out["h"] = {
    "linear_log_cosh": {str(p): s(h_linear(r_logcosh, R2["log-cosh"], mp.mpf(p))) for p in ["0.3", "1.0", "2.5"]},
    "linear_log_cosh_at_0": s(h_linear(r_logcosh, R2["log-cosh"], 0)),
    "linear_square_root_at_0": s(h_linear(r_sqrt, R2["square-root"], 0)),
    "nonlinear_tanh_at_0": s(h_nonlinear(r_tanh_act, R2["tanh"], mp.tanh, 0)),
    "nonlinear_tanh_at_2": s(h_nonlinear(r_tanh_act, R2["tanh"], mp.tanh, mp.mpf(2))),
    "nonlinear_tanh_grid_sup": s(max(h_tanh_grid)),
    "nonlinear_tanh_grid_min": s(min(h_tanh_grid)),
}

# one-step oracles
q, p = mp.mpf(2), mp.mpf("0.1")
out["map_fq_log_cosh_q2_p0p1"] = s(p * (1 - 2 * r_logcosh(p) / q))
q = mp.mpf("0.8")
rh = r_hat(r_logcosh, q)
out["map_fq_log_cosh_q0p8_at_rhat"] = s(rh * (1 - 2 * r_logcosh(rh) / q))

eta, p, q = mp.mpf("0.01"), mp.mpf(1), mp.mpf("0.9")
rp = r_logcosh(p)
out["step_linear_log_cosh"] = {
    "p": s((1 - 2 * rp / q + eta**2 * p**2 * rp**2) * p),
    "q": s(q / (1 - eta**2 * p**2 * rp * (2 * q - rp))),
}
eta, p, q = mp.mpf("0.005"), mp.mpf("0.8"), mp.mpf("0.7")
rp = r_tanh_act(p)
out["step_nonlinear_tanh"] = {
    "p": s((1 - 2 * rp / q) * p),
    "q": s(q / (1 - eta * mp.tanh(p) ** 2) ** 2),
}


# toy objectives, differentiated numerically by mpmath (independent of any hand gradient)
def elu(x):
    return x if x >= 0 else mp.exp(x) - 1


toys = {
    "logcosh-xy": lambda x, y: mp.log(mp.cosh(x * y)),
    "sq-tanh": lambda x, y: (mp.tanh(x) * y) ** 2 / 2,
    "sq-elu": lambda x, y: (elu(x) * y) ** 2 / 2,
}


def toy_step(model, x, y, eta):
    L = toys[model]
    gx = mp.diff(lambda t: L(t, y), x)
    gy = mp.diff(lambda t: L(x, t), y)
    return x - eta * gx, y - eta * gy


out["toy_step"] = {}
for model, x, y, eta in [
    ("sq-tanh", "0.5", "2", "0.005"),
    ("sq-elu", "-0.3", "1", "0.005"),
    ("logcosh-xy", "0.7", "3.1", "0.08"),
]:
    nx, ny = toy_step(model, mp.mpf(x), mp.mpf(y), mp.mpf(eta))
    out["toy_step"][model] = {"x": x, "y": y, "eta": eta, "x_next": s(nx), "y_next": s(ny)}


def toy_hessian_lmax(model, x, y):
    L = toys[model]
    hxx = mp.diff(lambda a: L(a, y), x, 2)
    hyy = mp.diff(lambda b: L(x, b), y, 2)
    hxy = mp.diff(lambda a, b: L(a, b), (x, y), (1, 1))
    ev = mp.eigsy(mp.matrix([[hxx, hxy], [hxy, hyy]]))[0]
    return max(ev[0], ev[1])


out["toy_hessian_lmax"] = {
    "sq-tanh_x0p5_y3": s(toy_hessian_lmax("sq-tanh", mp.mpf("0.5"), mp.mpf(3))),
    "sq-tanh_x1p2_ym0p7": s(toy_hessian_lmax("sq-tanh", mp.mpf("1.2"), mp.mpf("-0.7"))),
    "logcosh-xy_x0p4_y2p5": s(toy_hessian_lmax("logcosh-xy", mp.mpf("0.4"), mp.mpf("2.5"))),
}
x0 = mp.mpf("0.5")
rr = r_tanh_act(x0)
center = rr + x0 * dr(r_tanh_act, x0)
out["sandwich_tanh_x0p5_y3"] = {
    "lower": s(center * 9),
    "upper": s(center * 9 + 4 * x0**2 * rr / center),
}

# regime constants
z0_lc = sup_ratio(r_logcosh, mp.mpf("-0.5"))
z0_t = sup_ratio(r_tanh_act, mp.mpf("-0.5"))
z1_t = sup_ratio(r_tanh_act, mp.mpf(-1))
rh_half = r_hat(r_tanh_act, mp.mpf("0.5"))
out["regime"] = {
    "log_cosh_z0": s(z0_lc),
    "log_cosh_r_z0": s(r_logcosh(z0_lc)),
    "tanh_z0": s(z0_t),
    "tanh_r_z0": s(r_tanh_act(z0_t)),
    "tanh_z1": s(z1_t),
    "tanh_r_z1": s(r_tanh_act(z1_t)),
    "tanh_condition_iv": s(rh_half * dr(r_tanh_act, rh_half)),
}
c = r_tanh_act(z1_t)
q_below = c - mp.mpf("0.001")
rhq = r_hat(r_tanh_act, q_below)
out["classify_tanh_below_c"] = {
    "q": s(q_below),
    "multiplier": s(abs(1 + 2 * rhq * dr(r_tanh_act, rhq) / q_below)),
}

# lambda tilde
eta, q = mp.mpf("0.01"), mp.mpf("0.8")
rh = r_hat(r_logcosh, q)
out["lambda_tilde_log_cosh_q0p8_eta0p01"] = s((1 + rh * dr(r_logcosh, rh) / q) * 2 / eta)

# hand 2x2 tanh network, x = e1
U = [[mp.mpf("0.5"), mp.mpf("-0.3")], [mp.mpf("0.8"), mp.mpf("0.1")]]
v = [mp.mpf("1.2"), mp.mpf("-0.7")]
out["forward_tanh_2x2_e1"] = s(v[0] * mp.tanh(U[0][0]) + v[1] * mp.tanh(U[1][0]))

# generalized reparameterization for a hand-built linear net, n = 3
U = mp.matrix([["0.6", "-0.2"], ["0.3", "0.9"]])
v = mp.matrix(["0.5", "-1.1"])
X = [mp.matrix(["1.0", "0.0"]), mp.matrix(["0.4", "-0.8"]), mp.matrix(["-0.5", "0.7"])]
ys = [mp.mpf("0.2"), mp.mpf("-0.1"), mp.mpf("0.3")]
eta = mp.mpf("0.01")


def flat_grad(xi):
    g = []
    for i in range(2):
        for j in range(2):
            g.append(v[i] * xi[j])  # df/dU_ij
    ux = U * xi
    g.extend([ux[0], ux[1]])  # df/dv
    return g


J = [flat_grad(xi) for xi in X]
G = mp.matrix(3, 3)
for a in range(3):
    for b in range(3):
        G[a, b] = mp.fsum(J[a][k] * J[b][k] for k in range(6))
lam = max(mp.eigsy(G)[0])
res = [(v.T * U * X[i])[0] - ys[i] for i in range(3)]
out["generalized_hand_linear_n3"] = {
    "lambda_max_gram": s(lam),
    "q": s(2 * 3 / (eta * lam)),
    "p_mean": s(mp.fsum(res) / 3),
}

json.dump(out, sys.stdout, indent=2, sort_keys=True)
sys.stdout.write("\n")
