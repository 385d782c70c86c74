"""``crossres`` command-line interface.

Each subcommand writes CSV tables (RFC 4180, 17 significant digits), a JSON
manifest and, where useful, a standalone matplotlib script that plots the
CSV. Scripts are written, never run. On any failure the files written so far
are removed and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
import textwrap
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .model import GHZ, MHZ, NS, US, DriveSpec, load_preset

log = logging.getLogger("crossres")

COMMANDS = ("sweep-detuning", "sweep-amplitude", "ht", "echoed-cr", "qpt", "rb", "coherence-limit", "preset")


class InvariantError(RuntimeError):
    """A result failed a post-run consistency check."""


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return "" if v is None else str(v)


class Run:
    """Tracks outputs of one invocation so they can be listed or rolled back."""

    def __init__(self, command: str, out: Path, config_path, cfg: dict, argv):
        self.command = command
        self.out = out
        self.config_path = config_path
        self.cfg = cfg
        self.argv = list(argv)
        self.files: list[Path] = []
        self.created_dir = not out.exists()

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(p)
        return p

    def csv(self, name: str, header, rows):
        with self.path(name).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def json(self, name: str, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")

    def text(self, name: str, body: str):
        self.path(name).write_text(body)

    def manifest(self):
        try:
            version = metadata.version("artifact")
        except metadata.PackageNotFoundError:
            version = "unknown"
        outputs = [p.name for p in self.files] + ["manifest.json"]
        m = {
            "command": self.command,
            "config_path": None if self.config_path is None else str(self.config_path),
            "seed": self.cfg.get("seed"),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "code_version": version,
            "outputs": outputs,
            "argv": self.argv,
            "config": self.cfg,
        }
        self.json("manifest.json", m)

    def rollback(self):
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.created_dir:
            try:
                self.out.rmdir()
            except OSError:
                pass


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- shared builders ---------------------------------------------------------------------


def _preset(cfg):
    return load_preset(cfg["preset"], levels=cfg["levels"], j_zz_mhz=cfg["j_zz_mhz"])


def _drive(cfg) -> DriveSpec:
    d = cfg["drive"]
    f = d.get("frequency_ghz")
    return DriveSpec(
        amplitude=d["amplitude_mhz"] * MHZ,
        frequency=None if f is None else f * GHZ,
        phase=d["phase_rad"],
        crosstalk=d["crosstalk"],
        crosstalk_phase=d["crosstalk_phase_rad"],
    )


def _noise(preset, which):
    from .dynamics import NoiseSpec

    return None if which in (None, "none") else NoiseSpec.from_preset(preset, which)


def _calibrate(cfg, preset):
    from .dynamics import calibrate_zx_gate

    e = cfg["echo"]
    return calibrate_zx_gate(preset.spec, _drive(cfg), rise=e["rise_ns"] * NS, gap=e["gap_ns"] * NS,
                             pi_len=e["pi_ns"] * NS, pulsed_pi=e["pulsed_pi"], dt=e["dt_ns"] * NS)


def _plot_script(title, csv_name, body) -> str:
    head = f'''\
        """{title}. Reads {csv_name} from this directory."""
        import csv
        from pathlib import Path

        import matplotlib.pyplot as plt

        HERE = Path(__file__).resolve().parent


        def load(name):
            with open(HERE / name, newline="") as fh:
                rows = list(csv.DictReader(fh))
            return rows


        def col(rows, key):
            out = []
            for r in rows:
                try:
                    out.append(float(r[key]))
                except ValueError:
                    out.append(float("nan"))
            return out


        '''
    return textwrap.dedent(head) + textwrap.dedent(body)


# --- commands --------------------------------------------------------------------------------


def cmd_sweep_detuning(run: Run):
    from .effective import sweep_detuning

    cfg = run.cfg
    s = cfg["sweep_detuning"]
    grid = np.asarray(s["grid"]) if "grid" in s else np.linspace(s["start"], s["stop"], s["points"])
    table = sweep_detuning(_preset(cfg).spec, _drive(cfg), grid, pole_window=s["pole_window"],
                           min_block_overlap=s["min_block_overlap"])
    header = ("detuning_ratio",) + table.COLUMNS[1:]
    run.csv("sweep_detuning.csv", header, table.records())
    run.text("plot_sweep_detuning.py", _plot_script("Interaction strengths versus detuning", "sweep_detuning.csv", '''\
        rows = load("sweep_detuning.csv")
        x = col(rows, "detuning_ratio")
        fig, axes = plt.subplots(2, 3, figsize=(11, 6), sharex=True)
        for ax, term in zip(axes.ravel(), ["ZX", "ZY", "ZZ", "IX", "IY", "IZ"]):
            ax.plot(x, [v * 1e3 for v in col(rows, term + "_MHz")], ".-", ms=3)
            for lo, hi in [(0.2, 0.4), (0.6, 0.8)]:
                ax.axvspan(lo, hi, color="tab:orange", alpha=0.2)
            ax.set_title(term)
            ax.set_ylabel("kHz")
        for ax in axes[1]:
            ax.set_xlabel("-Delta_TA / delta_T")
        fig.tight_layout()
        fig.savefig(HERE / "sweep_detuning.png", dpi=150)
        '''))
    ok = [r for r in table.rows if r.status == "ok"]
    print(f"sweep-detuning: {len(table.rows)} points, {len(ok)} ok")


def cmd_sweep_amplitude(run: Run):
    from .effective import sweep_amplitude

    cfg = run.cfg
    s = cfg["sweep_amplitude"]
    amps = np.asarray(s["amplitudes_mhz"]) if "amplitudes_mhz" in s else np.linspace(s["start_mhz"], s["stop_mhz"],
                                                                                      s["points"])
    table = sweep_amplitude(_preset(cfg).spec, _drive(cfg), amps * MHZ, min_block_overlap=s["min_block_overlap"])
    rows = ([r[0] / MHZ] + r[1:] for r in table.records())
    run.csv("sweep_amplitude.csv", ("amplitude_MHz",) + table.COLUMNS[1:], rows)
    run.text("plot_sweep_amplitude.py", _plot_script("Interaction strengths versus drive amplitude",
                                                     "sweep_amplitude.csv", '''\
        rows = load("sweep_amplitude.csv")
        x = col(rows, "amplitude_MHz")
        fig, ax = plt.subplots(figsize=(6, 4))
        for term in ["ZX", "ZY", "ZZ", "IX", "IY", "IZ"]:
            ax.plot(x, col(rows, term + "_MHz"), ".-", label=term)
        ax.set_xlabel("drive amplitude / 2pi (MHz)")
        ax.set_ylabel("interaction / 2pi (MHz)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(HERE / "sweep_amplitude.png", dpi=150)
        '''))
    print(f"sweep-amplitude: {len(table.rows)} points")


def cmd_ht(run: Run):
    from .dynamics import simulate_cr_rabi
    from .effective import cr_effective_hamiltonian
    from .httomo import hamiltonian_tomography

    cfg = run.cfg
    h = cfg["ht"]
    preset = _preset(cfg)
    drive = _drive(cfg)
    noise = _noise(preset, h["noise"])
    trajs = [simulate_cr_rabi(preset.spec, drive, h["tau_max_us"] * US, h["points"], c, noise) for c in (0, 1)]
    res = hamiltonian_tomography(*trajs, n_starts=h["n_starts"])
    ref = cr_effective_hamiltonian(preset.spec, drive).coefficients.in_mhz()
    rows = []
    for tr in trajs:
        for t, x, y, z in zip(tr.times, tr.x, tr.y, tr.z):
            rows.append([t / US, tr.control_state, x, y, z])
    run.csv("ht_trajectories.csv", ("t_us", "control", "x", "y", "z"), rows)
    got = res.in_mhz()
    run.csv("ht_coefficients.csv", ("term", "fitted_MHz", "block_diagonal_MHz"),
            [[k, got[k], ref[k]] for k in ("ZX", "ZY", "ZZ", "IX", "IY", "IZ")])
    run.json("ht_fits.json", {"control_0": res.fit0.report(), "control_1": res.fit1.report(),
                              "gamma_mismatch": res.gamma_mismatch})
    run.text("plot_ht.py", _plot_script("Conditional target Bloch trajectories", "ht_trajectories.csv", '''\
        rows = load("ht_trajectories.csv")
        fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
        for c, style in (("0", "tab:blue"), ("1", "tab:red")):
            sel = [r for r in rows if r["control"] == c]
            for ax, k in zip(axes, "xyz"):
                ax.plot(col(sel, "t_us"), col(sel, k), color=style, label=f"control {c}")
                ax.set_ylabel(f"<{k}>")
        axes[-1].set_xlabel("CR pulse length (us)")
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(HERE / "ht.png", dpi=150)
        '''))
    print("ht: " + ", ".join(f"{k}={got[k] * 1e3:.2f} kHz" for k in ("ZX", "ZY", "ZZ", "IX", "IY", "IZ")))


def cmd_echoed_cr(run: Run):
    from .dynamics import simulate_echoed_cr_evolution

    cfg = run.cfg
    e = cfg["echo"]
    preset = _preset(cfg)
    cal = _calibrate(cfg, preset)
    rise = e["rise_ns"] * NS
    tmax = (e["tau_max_ns"] * NS) if e["tau_max_ns"] else 2.0 * cal.tau_half
    if tmax < 2 * rise:
        raise ValueError("tau_max_ns must allow at least one full pulse edge pair")
    grid = np.concatenate([[0.0], np.linspace(2 * rise, tmax, e["points"] - 1)])
    noise = _noise(preset, e["noise"])
    rows = []
    for c in (0, 1):
        tr = simulate_echoed_cr_evolution(cal.model, cal.drive, grid, noise, control_state=c, rise=rise,
                                          gap=e["gap_ns"] * NS, pi_len=e["pi_ns"] * NS, dt=e["dt_ns"] * NS,
                                          pulsed_pi=e["pulsed_pi"])
        rows.extend(tr.records())
    run.csv("echo_evolution.csv", ("tau_half_ns", "x", "y", "z", "control_z", "control"), rows)
    info = {
        "tau_half_ns": cal.tau_half / NS,
        "tau_analytic_ns": cal.tau_analytic / NS,
        "gate_duration_ns": cal.sequence.duration / NS,
        "achieved_angle_deg": float(np.rad2deg(cal.achieved_angle)),
        "zx_MHz": cal.zx / MHZ,
        "drive_phase_rad": cal.drive.phase,
        "z_correction_rad": list(cal.z_correction),
        "iterations": cal.iterations,
        "sequence": cal.sequence.to_dict(),
    }
    run.json("calibration.json", info)
    run.text("plot_echoed_cr.py", _plot_script("Echoed cross-resonance evolution", "echo_evolution.csv", f'''\
        rows = load("echo_evolution.csv")
        fig, axes = plt.subplots(4, 1, figsize=(6, 9), sharex=True)
        for c, color in (("0", "tab:blue"), ("1", "tab:red")):
            sel = [r for r in rows if r["control"] == c]
            t = col(sel, "tau_half_ns")
            for ax, k in zip(axes, ["x", "y", "z", "control_z"]):
                ax.plot(t, col(sel, k), color=color, label=f"control {{c}}")
                ax.set_ylabel(k)
        for ax in axes:
            ax.axvline({cal.tau_half / NS!r}, color="gray", alpha=0.4, lw=6)
        axes[-1].set_xlabel("CR half length (ns)")
        axes[0].legend()
        fig.tight_layout()
        fig.savefig(HERE / "echoed_cr.png", dpi=150)
        '''))
    print(f"echoed-cr: tau_half = {cal.tau_half / NS:.2f} ns, gate = {cal.sequence.duration / NS:.2f} ns")


def _ideal_zx90_gate(preset, which, duration):
    from .benchmarking import CoherenceParams, _two_qubit_decoherence, _vec_apply
    from .dynamics import ZX90

    S = None
    if which not in (None, "none"):
        c = preset.coherence
        p = [CoherenceParams(c[k].t1, c[k].t2_echo if which == "echo" else c[k].t2_ramsey) for k in ("T", "A")]
        S = _two_qubit_decoherence(p[0], p[1], duration)

    def gate(rho):
        out = ZX90 @ rho @ ZX90.conj().T
        return out if S is None else _vec_apply(S, out)

    return gate


def cmd_qpt(run: Run):
    from .numerics import SimplexOptions
    from .qpt import ConfusionMatrix, PAULI_LABELS, run_qpt

    cfg = run.cfg
    q = cfg["qpt"]
    preset = _preset(cfg)
    extra = {}
    if q["gate"] == "ideal-zx90":
        gate = _ideal_zx90_gate(preset, q["noise"], 220 * NS)
    else:
        from .dynamics import echoed_cr_channel

        cal = _calibrate(cfg, preset)
        gate = echoed_cr_channel(cal, _noise(preset, q["noise"]), dt=cfg["echo"]["dt_ns"] * NS)
        extra["tau_half_ns"] = cal.tau_half / NS
    conf = None
    if q["readout_fidelity"]:
        conf = [ConfusionMatrix.from_fidelity(f) for f in q["readout_fidelity"]]
    opts = SimplexOptions(max_iter=q["max_iter"], xtol=1e-9, ftol=1e-13, initial_step=1e-3)
    res = run_qpt(gate, confusions=conf, shots=q["shots"], rng=cfg["seed"], opts=opts)
    w = np.linalg.eigvalsh(res.chi_p)
    if w.min() < -1e-10 or abs(np.trace(res.chi_p).real - 1) > 1e-9:
        raise InvariantError(f"projected chi is not a unit-trace PSD matrix (min eigenvalue {w.min():.3e})")
    for part, fn in (("real", np.real), ("imag", np.imag)):
        for tag, M in (("chi_exp", res.chi_exp), ("chi", res.chi_p)):
            run.csv(f"{tag}_{part}.csv", ("row",) + tuple(PAULI_LABELS),
                    ([PAULI_LABELS[i]] + list(fn(M[i])) for i in range(16)))
    summary = {"F_pro": res.F_pro, "F_gate": res.F_gate, "projection_objective": res.projection.objective,
               "projection_iterations": res.projection.iterations, "projection_converged": res.projection.converged,
               "min_eigenvalue": float(w.min()), "gate": q["gate"], "noise": q["noise"], **extra}
    run.json("qpt_summary.json", summary)
    run.text("plot_qpt.py", _plot_script("Process matrix bars", "chi_real.csv", '''\
        import numpy as np

        fig = plt.figure(figsize=(10, 4.5))
        for k, part in enumerate(["real", "imag"]):
            rows = load(f"chi_{part}.csv")
            labels = [r["row"] for r in rows]
            M = np.array([[float(r[l]) for l in labels] for r in rows])
            ax = fig.add_subplot(1, 2, k + 1, projection="3d")
            xx, yy = np.meshgrid(np.arange(16), np.arange(16))
            ax.bar3d(xx.ravel(), yy.ravel(), 0, 0.8, 0.8, M.ravel(), shade=True)
            ax.set_title(f"Re chi" if part == "real" else "Im chi")
            ax.set_xticks(range(16), labels, fontsize=5)
            ax.set_yticks(range(16), labels, fontsize=5)
        fig.tight_layout()
        fig.savefig(HERE / "qpt.png", dpi=150)
        '''))
    print(f"qpt: F_pro = {res.F_pro:.6f}, F_gate = {res.F_gate:.6f}")


def _rb_channel(cfg, preset):
    from .benchmarking import CoherenceParams, DurationModel, coherence_channel, depolarizing_channel, ideal_channel

    r = cfg["rb"]
    n = r["noise"]
    if n == "none":
        return ideal_channel()
    if n.startswith("depolarizing:"):
        return depolarizing_channel(float(n.split(":", 1)[1]))
    which = n.split("-", 1)[1]
    c = preset.coherence
    p = [CoherenceParams(c[k].t1, c[k].t2_echo if which == "echo" else c[k].t2_ramsey) for k in ("T", "A")]
    dm = DurationModel(r["t_2q_ns"] * NS, r["t_1q_ns"] * NS, r["pulses_per_layer"])
    return coherence_channel(p[0], p[1], dm)


def cmd_rb(run: Run):
    from .benchmarking import interleaved_rb, run_rb, superoperator_channel, superoperator_from_map

    cfg = run.cfg
    r = cfg["rb"]
    preset = _preset(cfg)
    channel = _rb_channel(cfg, preset)
    header = ("length", "mean_survival", "std", "n_seq")
    if r["interleave"] is None:
        res = run_rb(r["lengths"], r["n_seq"], channel, cfg["seed"], shots=r["shots"])
        _check_survival(res)
        run.csv("rb_reference.csv", header, ([d[k] for k in header] for d in res.records()))
        run.json("rb_summary.json", {"reference": res.summary()})
        print(f"rb: alpha = {res.alpha:.6f} +- {res.alpha_err:.2g}, fidelity = {res.fidelity:.6f}")
    else:
        if r["interleave"] == "identity":
            gate, elem = (lambda rho: rho), np.eye(4)
        else:
            from .dynamics import ZX90, echoed_cr_channel

            noise_kind = r["noise"].split("-", 1)[1] if r["noise"].startswith("coherence-") else "none"
            cal = _calibrate(cfg, preset)
            hook = echoed_cr_channel(cal, _noise(preset, noise_kind), dt=cfg["echo"]["dt_ns"] * NS, renormalize=False)
            gate, elem = superoperator_channel(superoperator_from_map(hook)), ZX90
        res = interleaved_rb(r["lengths"], r["n_seq"], channel, gate, cfg["seed"], gate=elem, shots=r["shots"])
        for tag, sub in (("reference", res.reference), ("interleaved", res.interleaved)):
            _check_survival(sub)
            run.csv(f"rb_{tag}.csv", header, ([d[k] for k in header] for d in sub.records()))
        run.json("rb_summary.json", {"reference": res.reference.summary(), "interleaved": res.interleaved.summary(),
                                     "gate": res.summary()})
        print(f"rb: reference fidelity = {res.reference.fidelity:.6f}, gate fidelity = {res.fidelity:.6f} "
              f"+- {res.error_stderr:.2g}")
    run.text("plot_rb.py", _plot_script("Randomized benchmarking decays", "rb_reference.csv", '''\
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in ["rb_reference.csv", "rb_interleaved.csv"]:
            if not (HERE / name).exists():
                continue
            rows = load(name)
            ax.errorbar(col(rows, "length"), col(rows, "mean_survival"), yerr=col(rows, "std"), fmt="o",
                        label=name[3:-4])
        ax.set_xlabel("number of Cliffords")
        ax.set_ylabel("|00> survival")
        ax.legend()
        fig.tight_layout()
        fig.savefig(HERE / "rb.png", dpi=150)
        '''))


def _check_survival(res):
    if np.any(res.mean < 0) or np.any(res.mean > 1):
        raise InvariantError("survival probability outside [0, 1]")


def cmd_coherence_limit(run: Run, variant: str | None = None):
    from .benchmarking import CoherenceParams, coherence_limit_1q, coherence_limit_2q, kraus_limit_1q, kraus_limit_2q

    cfg = run.cfg
    c = cfg["coherence_limit"]
    preset = _preset(cfg)
    co = preset.coherence
    which = c["which"]
    qs = [CoherenceParams(co[k].t1, co[k].t2_echo if which == "echo" else co[k].t2_ramsey) for k in c["qubits"]]
    tau = c["tau_g_ns"] * NS
    tau1 = c["tau_1q_ns"] * NS
    rows = []
    variants = ("as_printed", "completed") if variant is None else (variant,)
    for v in variants:
        e2 = coherence_limit_2q(qs[0], qs[1], tau, v)
        rows.append(["2q", "+".join(c["qubits"]), v, tau / NS, e2, 1 - e2])
        for k, q in zip(c["qubits"], qs):
            e1 = coherence_limit_1q(q, v, tau1)
            rows.append(["1q", k, v, tau1 / NS, e1, 1 - e1])
    k2 = kraus_limit_2q(qs[0], qs[1], tau)
    rows.append(["2q", "+".join(c["qubits"]), "kraus_oracle", tau / NS, k2, 1 - k2])
    for k, q in zip(c["qubits"], qs):
        k1 = kraus_limit_1q(q, tau1)
        rows.append(["1q", k, "kraus_oracle", tau1 / NS, k1, 1 - k1])
    run.csv("coherence_limit.csv", ("gate", "qubits", "variant", "tau_ns", "error", "fidelity"), rows)
    print(f"coherence limit ({preset.name}, {which} T2, tau_g = {tau / NS:g} ns)")
    print(f"  {'gate':4s} {'qubits':7s} {'as_printed':>12s} {'completed':>12s} {'kraus':>12s}")
    table = {}
    for g, q, v, _, e, f in rows:
        table.setdefault((g, q), {})[v] = f
    for (g, q), d in table.items():
        cells = [f"{d[v]:12.6f}" if v in d else f"{'-':>12s}" for v in ("as_printed", "completed", "kraus_oracle")]
        print(f"  {g:4s} {q:7s} " + " ".join(cells))


def cmd_preset_show(name: str, levels: int = 4, j_zz_mhz=None):
    p = load_preset(name, levels=levels, j_zz_mhz=j_zz_mhz)
    out = {
        "name": p.name,
        "levels": levels,
        "j_xx_MHz": p.spec.j_xx / MHZ,
        "j_zz_MHz": p.spec.j_zz / MHZ,
        "modes": {m.label: {"frequency_GHz": m.frequency / GHZ, "anharmonicity_MHz": m.anharmonicity / MHZ,
                            "levels": m.levels} for m in p.spec.modes},
        "coherence_us": {k: {"T1": c.t1 / US, "T2_echo": c.t2_echo / US, "T2_ramsey": c.t2_ramsey / US}
                         for k, c in p.coherence.items()},
        "detuning_ta_MHz": p.spec.detuning_ta / MHZ,
    }
    print(json.dumps(out, indent=2))
    return out


_HANDLERS = {
    "sweep-detuning": cmd_sweep_detuning,
    "sweep-amplitude": cmd_sweep_amplitude,
    "ht": cmd_ht,
    "echoed-cr": cmd_echoed_cr,
    "qpt": cmd_qpt,
    "rb": cmd_rb,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crossres", description="Cross-resonance gate simulations and analyses.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, stochastic=False):
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="root seed (overrides the config)")
        p.add_argument("--levels", type=int, help="levels per mode")
        p.add_argument("--preset", choices=("exp1_cu", "exp2_al"))
        return p

    common(sub.add_parser("sweep-detuning", help="effective Hamiltonian versus detuning"))
    common(sub.add_parser("sweep-amplitude", help="effective Hamiltonian versus drive amplitude"))
    p = common(sub.add_parser("ht", help="Hamiltonian tomography of simulated Rabi data"))
    p.add_argument("--noise", choices=("none", "echo", "ramsey"))
    p = common(sub.add_parser("echoed-cr", help="calibrate and simulate the echoed CR gate"))
    p.add_argument("--noise", choices=("none", "echo", "ramsey"))
    p.add_argument("--pulsed-pi", action="store_true", help="simulate the control pi pulse instead of an ideal flip")
    p = common(sub.add_parser("qpt", help="process tomography of the calibrated gate"))
    p.add_argument("--gate", choices=("echoed-cr", "ideal-zx90"))
    p.add_argument("--noise", choices=("none", "echo", "ramsey"))
    p.add_argument("--pulsed-pi", action="store_true")
    p = common(sub.add_parser("rb", help="standard or interleaved randomized benchmarking"))
    p.add_argument("--noise", help="none, coherence-echo, coherence-ramsey or depolarizing:P")
    p.add_argument("--interleave", choices=("zx90", "identity"))
    p.add_argument("--pulsed-pi", action="store_true")
    p = common(sub.add_parser("coherence-limit", help="decoherence-limited gate fidelities"))
    p.add_argument("--variant", choices=("as_printed", "completed"), help="show only one formula variant")
    p = sub.add_parser("preset", help="inspect device presets")
    p.add_argument("action", choices=("show",))
    p.add_argument("name", choices=("exp1_cu", "exp2_al"))
    p.add_argument("--levels", type=int, default=4)
    return ap


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "levels", None) is not None:
        o["levels"] = args.levels
    if getattr(args, "preset", None) is not None:
        o["preset"] = args.preset
    cmd = args.command
    noise = getattr(args, "noise", None)
    if cmd == "ht" and noise:
        o["ht"] = {"noise": noise}
    if cmd == "echoed-cr" and noise:
        o["echo"] = {"noise": noise}
    if cmd == "qpt":
        q = {}
        if noise:
            q["noise"] = noise
        if args.gate:
            q["gate"] = args.gate
        if q:
            o["qpt"] = q
    if cmd == "rb":
        r = {}
        if noise:
            r["noise"] = noise
        if args.interleave:
            r["interleave"] = args.interleave
        if r:
            o["rb"] = r
    if getattr(args, "pulsed_pi", False):
        o.setdefault("echo", {})["pulsed_pi"] = True
    return o


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "preset":
        try:
            cmd_preset_show(args.name, args.levels)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = load_config(args.config, args.command, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run = Run(args.command, args.out, args.config, cfg, ["crossres"] + argv)
    try:
        if args.command == "coherence-limit":
            cmd_coherence_limit(run, args.variant)
        else:
            _HANDLERS[args.command](run)
        run.manifest()
    except InvariantError as exc:
        run.rollback()
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - reported and rolled back
        run.rollback()
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
