"""Statistics harness: one-way ANOVA, survival curves, summary rates, reports.

The F-distribution tail probability is computed from scratch through the
regularized incomplete beta function (modified Lentz continued fraction),
so the harness has no statistics-library dependency and its numerics are
pinned by an integration oracle in the tests. Bundled CSV fixtures carry
the published comparison tables this harness is expected to reproduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import UnbalancedGroups

_CF_MAX_ITER = 400
_CF_EPS = 1e-15


# ---------------------------------------------------------------------------
# Regularized incomplete beta / F-distribution tail
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz evaluation."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction stalled at a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b) with relative error well below 1e-10 for moderate a, b."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x < 0.0 or x > 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # The continued fraction converges fast only on one side of the mean;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) for the other side.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f_value: float, df1: int, df2: int) -> float:
    """Upper tail of the F distribution: P(F_{df1,df2} > f_value)."""
    if f_value <= 0.0:
        return 1.0
    if math.isinf(f_value):
        return 0.0
    x = df2 / (df2 + df1 * f_value)
    return betainc_regularized(df2 / 2.0, df1 / 2.0, x)


# ---------------------------------------------------------------------------
# One-way ANOVA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float


def one_way_anova(groups) -> AnovaResult:
    """Balanced one-way ANOVA over k equal-size groups of observations.

    Zero within-group variance is reported rather than raised: F=inf/p=0
    when the groups differ, F=0/p=1 when everything is identical.
    """
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2:
        raise ValueError("ANOVA needs at least two groups")
    m = arrays[0].size
    if any(a.size != m for a in arrays):
        raise UnbalancedGroups(f"group sizes {[a.size for a in arrays]} differ")
    if m < 2:
        raise ValueError("each group needs at least two observations")

    k = len(arrays)
    df_between, df_within = k - 1, k * m - k
    grand = float(np.mean(np.concatenate(arrays)))
    ss_between = float(sum(a.size * (a.mean() - grand) ** 2 for a in arrays))
    ss_within = float(sum(((a - a.mean()) ** 2).sum() for a in arrays))

    if ss_within == 0.0:
        if ss_between > 0.0:
            return AnovaResult(np.inf, df_between, df_within, 0.0)
        return AnovaResult(0.0, df_between, df_within, 1.0)

    f_value = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(f_value, df_between, df_within, f_sf(f_value, df_between, df_within))


# ---------------------------------------------------------------------------
# Survival curves and summary rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalCurve:
    """Fraction of tasks still unsolved after n corrective iterations."""

    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.points or self.points[0] != (0, 1.0):
            raise ValueError("survival curves start at (0, 1.0)")
        fractions = [f for _, f in self.points]
        if any(b > a + 1e-12 for a, b in zip(fractions, fractions[1:])):
            raise ValueError("unsolved fraction must be non-increasing")

    def unsolved_at(self, n: int) -> float:
        value = 1.0
        for point_n, fraction in self.points:
            if point_n <= n:
                value = fraction
            else:
                break
        return value


def survival_curve(results) -> SurvivalCurve:
    """results: iterable of (success: bool, iterations: int | None)."""
    results = list(results)
    if not results:
        raise ValueError("survival needs at least one result")
    iterations = []
    for success, iters in results:
        if success:
            if iters is None:
                raise ValueError("successful results must carry an iteration count")
            iterations.append(int(iters))
    n_total = len(results)
    horizon = max(iterations, default=0)
    points = [(0, 1.0)]
    for n in range(1, horizon + 1):
        solved = sum(1 for it in iterations if it <= n)
        points.append((n, 1.0 - solved / n_total))
    return SurvivalCurve(points=tuple(points))


@dataclass(frozen=True)
class SummaryStats:
    success_rate: float
    first_attempt_rate: float
    mean_iterations: float | None


def summary_stats(results) -> SummaryStats:
    """Final success rate, first-attempt rate, mean iterations over successes."""
    results = list(results)
    if not results:
        raise ValueError("summary needs at least one result")
    n = len(results)
    succ = [(s, it) for s, it in results if s]
    first = sum(1 for s, it in succ if it == 1)
    mean_iters = float(np.mean([it for _, it in succ])) if succ else None
    return SummaryStats(
        success_rate=len(succ) / n,
        first_attempt_rate=first / n,
        mean_iterations=mean_iters)


# ---------------------------------------------------------------------------
# Bundled trial tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRow:
    group: str
    task: str
    value: float
    iterations: int | None = None


@dataclass(frozen=True)
class TrialTable:
    rows: tuple[TrialRow, ...]

    def groups(self) -> dict:
        """Group label -> value list, preserving first-seen group order."""
        out: dict[str, list[float]] = {}
        for row in self.rows:
            out.setdefault(row.group, []).append(row.value)
        return out

    def iterative_results(self, group: str) -> list[tuple[bool, int | None]]:
        """(success, iterations) pairs for one group of binary-outcome rows."""
        picked = [r for r in self.rows if r.group == group]
        return [(r.value >= 0.5, r.iterations) for r in picked]


def load_trial_table(path) -> TrialTable:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("group,"):
                continue
            group, task, value, iterations = (line.split(",") + [""])[:4]
            rows.append(TrialRow(
                group=group, task=task, value=float(value),
                iterations=int(iterations) if iterations else None))
    return TrialTable(rows=tuple(rows))


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("physagent.data").joinpath(name)))


def load_bundled_tables() -> dict:
    return {
        "methods": load_trial_table(fixture_path("table1_methods.csv")),
        "platforms": load_trial_table(fixture_path("table2_platforms.csv")),
        "iterative": load_trial_table(fixture_path("table3_iterative.csv")),
    }


# ---------------------------------------------------------------------------
# Report emission (CSV + SVG)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.6g" % x


def write_report_csv(path, anova: dict, summaries: dict, curves: dict) -> None:
    lines = ["section,label,field,value"]
    for name in sorted(anova):
        r = anova[name]
        lines.append(f"anova,{name},f_statistic,{_fmt(r.f_statistic)}")
        lines.append(f"anova,{name},df_between,{r.df_between}")
        lines.append(f"anova,{name},df_within,{r.df_within}")
        lines.append(f"anova,{name},p_value,{_fmt(r.p_value)}")
    for name in sorted(summaries):
        s = summaries[name]
        lines.append(f"summary,{name},success_rate,{_fmt(s.success_rate)}")
        lines.append(f"summary,{name},first_attempt_rate,{_fmt(s.first_attempt_rate)}")
        mean = "" if s.mean_iterations is None else _fmt(s.mean_iterations)
        lines.append(f"summary,{name},mean_iterations,{mean}")
    for name in sorted(curves):
        for n, fraction in curves[name].points:
            lines.append(f"survival,{name},{n},{_fmt(fraction)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_survival_from_report(path) -> dict:
    """Rebuild the survival curves embedded in a report.csv."""
    curves: dict[str, list[tuple[int, float]]] = {}
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) == 4 and parts[0] == "survival":
                curves.setdefault(parts[1], []).append((int(parts[2]), float(parts[3])))
    return {name: SurvivalCurve(points=tuple(sorted(pts)))
            for name, pts in curves.items()}


_SVG_COLORS = ("#c0392b", "#2e6da4", "#3d9970", "#8e44ad", "#e67e22")


def _svg_header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]


def write_survival_svg(path, curves: dict, width: int = 640, height: int = 420) -> None:
    """Step plot of unsolved fraction against corrective iterations."""
    left, right, top, bottom = 60, 20, 40, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    horizon = max((c.points[-1][0] for c in curves.values()), default=1)
    horizon = max(horizon + 1, 2)

    def sx(n):
        return left + plot_w * n / horizon

    def sy(f):
        return top + plot_h * (1.0 - f)

    parts = _svg_header(width, height, "Unsolved fraction after n iterations")
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
                 f'y2="{top + plot_h}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{frac:.2f}</text>')
    for n in range(horizon + 1):
        x = sx(n)
        parts.append(f'<line x1="{x:.1f}" y1="{top + plot_h}" x2="{x:.1f}" '
                     f'y2="{top + plot_h + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{top + plot_h + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{n}</text>')

    for i, name in enumerate(sorted(curves)):
        curve = curves[name]
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        coords = [(sx(0), sy(1.0))]
        value = 1.0
        for n, fraction in curve.points[1:]:
            coords.append((sx(n), sy(value)))
            coords.append((sx(n), sy(fraction)))
            value = fraction
        coords.append((sx(horizon), sy(value)))
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{left + plot_w - 6}" y="{top + 16 + 16 * i}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def write_methods_svg(path, table: TrialTable, width: int = 640,
                      height: int = 420) -> None:
    """Bar chart of group means with 95% confidence-interval whiskers."""
    groups = table.groups()
    names = list(groups)
    means = [float(np.mean(groups[n])) for n in names]
    half_ci = [1.96 * float(np.std(groups[n], ddof=1)) / math.sqrt(len(groups[n]))
               for n in names]

    left, right, top, bottom = 60, 20, 40, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    y_max = max(m + c for m, c in zip(means, half_ci)) * 1.1

    def sy(v):
        return top + plot_h * (1.0 - v / y_max)

    parts = _svg_header(width, height, "Mean success rate by group (95% CI)")
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
                 f'y2="{top + plot_h}" stroke="black"/>')
    for i in range(5):
        v = y_max * i / 4
        y = sy(v)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{v:.0f}</text>')

    slot = plot_w / len(names)
    bar_w = slot * 0.6
    for i, name in enumerate(names):
        x0 = left + slot * i + (slot - bar_w) / 2
        y0 = sy(means[i])
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        parts.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{bar_w:.1f}" '
                     f'height="{top + plot_h - y0:.1f}" fill="{color}" '
                     'fill-opacity="0.8"/>')
        cx = x0 + bar_w / 2
        y_lo, y_hi = sy(means[i] - half_ci[i]), sy(means[i] + half_ci[i])
        parts.append(f'<line x1="{cx:.1f}" y1="{y_lo:.1f}" x2="{cx:.1f}" '
                     f'y2="{y_hi:.1f}" stroke="black"/>')
        for y in (y_lo, y_hi):
            parts.append(f'<line x1="{cx - 5:.1f}" y1="{y:.1f}" x2="{cx + 5:.1f}" '
                         f'y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{top + plot_h + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def emit_report(out_dir, anova: dict, summaries: dict, curves: dict,
                method_table: TrialTable | None = None) -> list[Path]:
    """Write report.csv plus survival.svg and methods.svg into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    report = out / "report.csv"
    write_report_csv(report, anova, summaries, curves)
    written.append(report)
    if curves:
        svg = out / "survival.svg"
        write_survival_svg(svg, curves)
        written.append(svg)
    if method_table is not None:
        svg = out / "methods.svg"
        write_methods_svg(svg, method_table)
        written.append(svg)
    return written


# ---------------------------------------------------------------------------
# Fixture analysis (the published-statistics reproduction path)
# ---------------------------------------------------------------------------

def analyze_fixtures(tables: dict | None = None):
    """ANOVA + summaries + survival curves over the bundled tables."""
    tables = tables or load_bundled_tables()
    anova = {
        "methods": one_way_anova(list(tables["methods"].groups().values())),
        "platforms": one_way_anova(list(tables["platforms"].groups().values())),
    }
    summaries = {}
    curves = {}
    iterative = tables["iterative"]
    for platform in iterative.groups():
        results = iterative.iterative_results(platform)
        summaries[platform] = summary_stats(results)
        curves[platform] = survival_curve(results)
    return anova, summaries, curves


def check_paper_statistics(anova: dict, summaries: dict) -> list[tuple[str, bool, str]]:
    """Threshold checks used by `analyze --check`."""
    checks = []
    m = anova["methods"]
    checks.append(("methods F = 5.04 +- 0.05",
                   abs(m.f_statistic - 5.04) <= 0.05 and (m.df_between, m.df_within) == (4, 60),
                   f"F({m.df_between},{m.df_within}) = {m.f_statistic:.4f}"))
    checks.append(("methods p = 0.0014 +- 0.0005",
                   abs(m.p_value - 0.0014) <= 0.0005, f"p = {m.p_value:.6f}"))
    p = anova["platforms"]
    checks.append(("platforms F = 2.01 +- 0.05",
                   abs(p.f_statistic - 2.01) <= 0.05 and (p.df_between, p.df_within) == (2, 36),
                   f"F({p.df_between},{p.df_within}) = {p.f_statistic:.4f}"))
    checks.append(("platforms p = 0.1485 +- 0.005",
                   abs(p.p_value - 0.1485) <= 0.005, f"p = {p.p_value:.6f}"))
    expected = {"UR3": (0.80, 0.30, 2.25), "G1": (0.80, 0.20, 2.75)}
    for platform, (sr, fr, mi) in expected.items():
        if platform in summaries:
            s = summaries[platform]
            ok = (abs(s.success_rate - sr) < 1e-12
                  and abs(s.first_attempt_rate - fr) < 1e-12
                  and s.mean_iterations is not None
                  and abs(s.mean_iterations - mi) < 1e-12)
            checks.append((f"{platform} summary = ({sr}, {fr}, {mi})", ok,
                           f"({s.success_rate}, {s.first_attempt_rate}, {s.mean_iterations})"))
    return checks
