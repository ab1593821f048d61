"""Verification of experiment artifacts.

Every check is computed purely from the files an experiment wrote (CSV
artifacts plus the manifest); nothing is retrained.  Failures are report
content, not exceptions.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .experiments import MANIFEST_NAME
from .plotting import read_table


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: str  # the observed quantity, for the human reading the report


@dataclass(frozen=True)
class VerifyReport:
    kind: str
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def lines(self) -> list:
        out = [f"kind: {self.kind}"]
        for check in self.checks:
            status = "PASS" if check.passed else "FAIL"
            out.append(f"{status} {check.name}: {check.measured}")
        verdict = "all checks passed" if self.passed else "violations found"
        out.append(f"result: {verdict}")
        return out


def _check(name, passed, measured) -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), measured=measured)


def _below_bound(table, loss_col, bound_col, se_col=None):
    loss = table[loss_col]
    allowance = table[bound_col] + 1e-9
    if se_col is not None:
        allowance = allowance + 2.0 * table[se_col]
    excess = loss - allowance
    worst = float(excess.max())
    t_worst = int(table["t"][int(excess.argmax())])
    return _check(
        f"{loss_col} <= {bound_col} (+2 se)",
        worst <= 0.0,
        f"max excess {worst:.3e} at t={t_worst}",
    )


def _verify_fig1(run_dir, manifest):
    table = read_table(os.path.join(run_dir, "fig1-convergence.csv"))
    return [
        _below_bound(table, "loss_nominal", "bound_nominal"),
        _below_bound(table, "loss_private", "bound_private", "se_private"),
        _below_bound(table, "loss_robust", "bound_robust"),
        _below_bound(
            table, "loss_robust_private", "bound_robust_private", "se_robust_private"
        ),
    ]


def _gap_columns(table):
    return [name for name in table if name.startswith("gap_")]


def _verify_fig2(run_dir, manifest):
    table = read_table(os.path.join(run_dir, "fig2-gap.csv"))
    ts = table["t"]
    checks = []
    anchor = int(np.argmin(np.abs(ts - 10.0)))
    last = int(np.argmax(ts))
    private_cols = [n for n in _gap_columns(table) if n != "gap_nonprivate"]
    # the tends-to-zero claim is checked on the curves the figure shows: the
    # noiseless gap and the private gap at its own dimension (first column);
    # at much larger d the constant noise floor eta*d*sigma^2 dominates
    decay_cols = ["gap_nonprivate"] + private_cols[:1]
    for name in decay_cols:
        if name not in table:
            continue
        ratio = table[name][last] / table[name][anchor]
        checks.append(
            _check(
                f"{name} decays (t={int(ts[last])} vs t={int(ts[anchor])})",
                ratio < 0.10,
                f"ratio {ratio:.4f}",
            )
        )
    nonprivate = table.get("gap_nonprivate")
    if nonprivate is not None:
        for name in private_cols:
            deficit = float((table[name] - nonprivate).min())
            checks.append(
                _check(
                    f"{name} >= gap_nonprivate pointwise",
                    deficit >= -1e-9,
                    f"min difference {deficit:.3e}",
                )
            )
    if len(private_cols) >= 2:
        t100 = int(np.argmin(np.abs(ts - 100.0)))
        values = [float(table[name][t100]) for name in private_cols]
        increasing = all(b > a for a, b in zip(values, values[1:]))
        checks.append(
            _check(
                f"private gap increases with d at t={int(ts[t100])}",
                increasing,
                "values " + ", ".join(f"{v:.4f}" for v in values),
            )
        )
    return checks


def _verify_fig3(run_dir, manifest):
    table = read_table(os.path.join(run_dir, "fig3-robust-compare.csv"))
    ts = table["t"]
    robust = table["bound_robust"]
    rus = table["bound_robust_under_standard"]
    above = np.nonzero(robust >= rus)[0]
    crossover = int(ts[above[-1]] + 1) if above.size else int(ts[0])
    crossed = bool(robust[-1] < rus[-1]) and (above.size == 0 or above[-1] < len(ts) - 1)
    checks = [
        _check(
            "worst-case-training bound ends below the plain-training bound",
            crossed,
            f"crossover at t={crossover}",
        )
    ]
    params = manifest.get("params", {})
    c, eta = params.get("c"), params.get("eta")
    if c is not None and eta is not None and len(ts) >= 4:
        mid = len(ts) // 2
        slope = (rus[-1] - rus[mid]) / (ts[-1] - ts[mid])
        ratio = slope / (c * eta)
        checks.append(
            _check(
                "plain-training bound grows linearly at rate c*eta",
                0.8 <= ratio <= 1.2,
                f"tail slope / (c*eta) = {ratio:.4f}",
            )
        )
    checks.append(
        _check(
            "trained worst-case loss ends below the plainly trained one",
            table["adv_loss_adversarial_training"][-1]
            < table["adv_loss_standard_training"][-1],
            f"{table['adv_loss_adversarial_training'][-1]:.4f} vs "
            f"{table['adv_loss_standard_training'][-1]:.4f}",
        )
    )
    return checks


def _spearman_check(name, a, b, want_positive):
    coeff = float(spearmanr(a, b).statistic)
    passed = coeff > 0 if want_positive else coeff < 0
    sign = ">" if want_positive else "<"
    return _check(f"spearman({name}) {sign} 0", passed, f"coefficient {coeff:.4f}")


def _load_sweep(run_dir, filename):
    table = read_table(os.path.join(run_dir, filename))
    keep = table["diverged"] == 0
    return {name: column[keep] for name, column in table.items()}


def _verify_fig8(run_dir, manifest):
    table = _load_sweep(run_dir, "fig8-sweep.csv")
    return [
        _spearman_check("lambda_max, c", table["lambda_max"], table["c"], True),
        _spearman_check(
            "lambda_max, clip k", table["lambda_max"], table["k_or_epsilon"], False
        ),
        _spearman_check(
            "test accuracy, lambda_max", table["test_accuracy"], table["lambda_max"], False
        ),
    ]


def _verify_fig9(run_dir, manifest):
    # No lambda-vs-c check here: DP noise dominates curvature in this sweep,
    # so the budget effect is only claimed for the noiseless clipping sweep.
    table = _load_sweep(run_dir, "fig9-sweep.csv")
    return [
        _spearman_check(
            "lambda_max, epsilon", table["lambda_max"], table["k_or_epsilon"], False
        ),
        _spearman_check(
            "test accuracy, lambda_max", table["test_accuracy"], table["lambda_max"], False
        ),
    ]


def _verify_bounds_only(run_dir, manifest):
    table = read_table(os.path.join(run_dir, "bounds-only.csv"))
    checks = []
    finite = all(np.all(np.isfinite(col)) for col in table.values())
    checks.append(_check("all bound values finite", finite, f"finite={finite}"))
    positive = all(
        float(col.min()) > 0 for name, col in table.items() if name.startswith("bound_")
    )
    checks.append(_check("all bound values positive", positive, f"positive={positive}"))
    pairs = [
        ("bound_private", "bound_nominal"),
        ("bound_robust_private", "bound_robust"),
    ]
    for upper, lower in pairs:
        if upper in table and lower in table:
            deficit = float((table[upper] - table[lower]).min())
            checks.append(
                _check(
                    f"{upper} >= {lower} pointwise",
                    deficit >= -1e-12,
                    f"min difference {deficit:.3e}",
                )
            )
    return checks


def _verify_attack_eval(run_dir, manifest):
    table = read_table(os.path.join(run_dir, "attack-eval.csv"))
    checks = []
    in_range = all(
        0.0 <= float(table[col].min()) and float(table[col].max()) <= 1.0
        for col in ("acc_standard", "acc_adversarial")
    )
    checks.append(_check("accuracies lie in [0, 1]", in_range, f"in_range={in_range}"))
    n_hint = manifest.get("params", {}).get("n", 0) or 1
    slack = 1.5 / float(n_hint)
    for measured, exact in (
        ("acc_standard", "exact_acc_standard"),
        ("acc_adversarial", "exact_acc_adversarial"),
    ):
        diff = float(np.abs(table[measured] - table[exact]).max())
        checks.append(
            _check(
                f"{measured} matches the closed form",
                diff <= slack,
                f"max |difference| {diff:.4f}",
            )
        )
    c_train = manifest.get("params", {}).get("c_train")
    if c_train is not None:
        idx = int(np.argmin(np.abs(table["budget"] - float(c_train))))
        improvement = float(table["improvement"][idx])
        checks.append(
            _check(
                "worst-case training does not hurt at its own budget",
                improvement >= -slack,
                f"improvement {improvement:.4f} at budget {table['budget'][idx]:g}",
            )
        )
    return checks


_VERIFIERS = {
    "fig1-convergence": _verify_fig1,
    "fig2-gap": _verify_fig2,
    "fig3-robust-compare": _verify_fig3,
    "fig8-sweep": _verify_fig8,
    "fig9-sweep": _verify_fig9,
    "bounds-only": _verify_bounds_only,
    "attack-eval": _verify_attack_eval,
}


def verify_report(run_dir) -> VerifyReport:
    """Check an experiment output directory against the claims its kind is
    supposed to exhibit."""
    manifest_path = os.path.join(run_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {run_dir}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    kind = manifest.get("kind", "")
    verifier = _VERIFIERS.get(kind)
    if verifier is None:
        raise ValueError(f"manifest names unknown experiment kind {kind!r}")
    checks = verifier(run_dir, manifest)
    return VerifyReport(kind=kind, checks=tuple(checks))
