"""Command-line scenario runner.

Exit codes: 0 success, 1 usage, 2 infeasible plan, 3 validation, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from . import atwm_plan as ap
from . import io as fio
from . import photon_sim as ps
from . import quantum_state as qs
from . import swap_engine as se
from .config import ConfigError, ScenarioConfig, input_state_source, load

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3, 4

ANALYSES = ("matrix", "xcorr", "fringes", "hom", "swap-report")


def _write_text(path: Path, text: str) -> str:
    path.write_text(text, encoding="utf-8")
    return path.name


def _write_doc(path: Path, doc: dict) -> str:
    fio.dump_json(path, doc)
    return path.name


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- plan ---------------------------------------------------------------------


def plan_document(cfg: ScenarioConfig) -> dict:
    nets = []
    for n in cfg.networks:
        schedule = n.schedule()
        report = ap.verify_full_connectivity(schedule)
        nets.append(
            {
                "schedule": ap.schedule_to_dict(schedule),
                "topology": report.graph.to_dict(),
                "missing_pairs": [[a.channel_number, b.channel_number] for a, b in report.missing_pairs],
            }
        )
    return {"kind": "plan", "config_hash": cfg.hash(), "networks": nets}


def plan_csv(doc: dict) -> str:
    rows = []
    for net in doc["networks"]:
        s = net["schedule"]
        for slot in s["slots"]:
            rows.append(
                [
                    s["network_id"],
                    slot["slot_index"],
                    slot["time_offset_ps"],
                    f"{slot['telecom_wavelength_nm']:.2f}",
                    f"{slot['sh_wavelength_nm']:.2f}",
                    " ".join(f"{a}-{b}" for a, b in slot["pairs"]),
                ]
            )
    return _csv_text(
        ["network_id", "slot_index", "time_offset_ps", "telecom_wavelength_nm", "sh_wavelength_nm", "pairs"],
        rows,
    )


def cmd_plan(cfg: ScenarioConfig, out: Path | None, fmt: str = "json") -> list[str]:
    doc = plan_document(cfg)
    text = plan_csv(doc) if fmt == "csv" else json.dumps({"format_version": 1, **doc}, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return []
    out.mkdir(parents=True, exist_ok=True)
    return [_write_text(out / f"plan.{fmt}", text)]


# -- simulate -----------------------------------------------------------------


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> list[str]:
    """Stream one tag file per user detector, then the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    files = []
    h = cfg.hash()
    seed = cfg.run.seed
    for idx, net in enumerate(cfg.networks):
        schedule = net.schedule()
        duration_ps = int(round(cfg.run.duration_s * ps.PS_PER_S))
        handles = {}
        try:
            for c in net.channels:
                name = fio.tag_file_name(net.id, c)
                fh = open(out / name, "w", encoding="utf-8", newline="")
                handles[c] = fh
                fh.write(fio.tag_header(schedule.node(c), duration_ps, seed, h))
                files.append(name)
            for _, _, chunk in ps.iter_network_chunks(
                schedule,
                net.source,
                net.detectors(),
                net.links(),
                cfg.run.duration_s,
                [seed, idx],
                cfg.run.chunk_pulses,
            ):
                for c, tags in chunk.items():
                    fio.append_tags(handles[c], schedule.node(c), tags)
        finally:
            for fh in handles.values():
                fh.close()
    fio.write_manifest(out, files, h, seed)
    return files + [fio.MANIFEST]


def load_streams(cfg: ScenarioConfig, tags_dir: Path) -> dict[str, dict[int, ps.TimeTagStream]]:
    manifest = fio.read_manifest(tags_dir)
    if manifest["config_hash"] != cfg.hash():
        raise fio.FormatError(
            f"{tags_dir}: tags were produced by config {manifest['config_hash']}, not {cfg.hash()}"
        )
    return {
        net.id: {c: fio.read_tags(tags_dir / fio.tag_file_name(net.id, c)) for c in net.channels}
        for net in cfg.networks
    }


# -- analyses -----------------------------------------------------------------


def simulated_matrices(cfg: ScenarioConfig) -> dict[str, an.CoincidenceMatrix]:
    """Slot-gated matrices accumulated chunk by chunk, without writing tags."""
    out = {}
    for idx, net in enumerate(cfg.networks):
        schedule = net.schedule()
        total = None
        for start, stop, chunk in ps.iter_network_chunks(
            schedule,
            net.source,
            net.detectors(),
            net.links(),
            cfg.run.duration_s,
            [cfg.run.seed, idx],
            cfg.run.chunk_pulses,
        ):
            m = an.coincidence_matrix(chunk, schedule, cfg.run.window_ps, (stop - start) / ps.PS_PER_S)
            total = m if total is None else total + m
        out[net.id] = total
    return out


def write_matrices(matrices: dict[str, an.CoincidenceMatrix], out: Path, fmt: str) -> list[str]:
    files = []
    for nid, m in matrices.items():
        off = m.off_diagonal()
        if fmt == "csv":
            text = _csv_text(["user"] + list(m.users), [[u] + row for u, row in zip(m.users, m.counts.tolist())])
            files.append(_write_text(out / f"matrix_{nid}.csv", text))
        else:
            doc = {
                "kind": "coincidence_matrix",
                "network_id": nid,
                **m.to_dict(),
                "min_pair_count": int(off.min()) if off.size else 0,
            }
            files.append(_write_doc(out / f"matrix_{nid}.json", doc))
    return files


def analyze_matrix(cfg: ScenarioConfig, streams, out: Path, fmt: str) -> list[str]:
    matrices = {
        net.id: an.coincidence_matrix(streams[net.id], net.schedule(), cfg.run.window_ps, cfg.run.duration_s)
        for net in cfg.networks
    }
    return write_matrices(matrices, out, fmt)


def analyze_xcorr(cfg: ScenarioConfig, streams, out: Path) -> list[str]:
    """Cross-correlation of a reference channel with every other user.

    Delays are ``t_other - t_reference``; true pairs sit at zero delay. The
    ``slot_delay_ps`` column places each peak on the reference photon's
    arrival-time axis (its slot offset after the pump pulse).
    """
    opts = cfg.analysis["xcorr"]
    ref = int(opts["reference"])
    files = []
    for net in cfg.networks:
        schedule = net.schedule()
        if ref not in net.channels:
            raise ConfigError(f"reference channel {ref} not in network {net.id}", "analysis.xcorr.reference")
        rows = []
        for c in net.channels:
            if c == ref:
                continue
            hist = an.cross_correlate(streams[net.id][ref], streams[net.id][c], int(opts["bin_ps"]), int(opts["span_ps"]))
            slot = ap.slot_of_pair(schedule, ref, c)
            delay = an.slot_delay(schedule, ref, c)
            for e, n in zip(hist.edges[:-1], hist.counts):
                rows.append([c, slot, delay, int(e), int(n)])
        text = _csv_text(["other_channel", "slot", "slot_delay_ps", "left_edge_ps", "count"], rows)
        files.append(_write_text(out / f"xcorr_{net.id}_CH{ref}.csv", text))
    return files


def _fusion_inputs(cfg: ScenarioConfig):
    if cfg.fusion is None:
        raise ConfigError("this analysis needs a 'fusion' section", "fusion")
    return cfg.fusion


def swap_report(cfg: ScenarioConfig) -> se.FusionReport:
    fusion = _fusion_inputs(cfg)
    plan_a, plan_b = (n.schedule() for n in cfg.networks)
    bsm = ap.ItuChannel(fusion.bsm_channel)
    idlers_a = [c for c in plan_a.channels if c != bsm]
    idlers_b = [c for c in plan_b.channels if c != bsm]
    if fusion.alignment == "auto":
        settings = ap.alignment_schedule(idlers_a, idlers_b)
    else:
        settings = [
            ap.AlignmentSetting(i, tuple((ap.ItuChannel(a), ap.ItuChannel(b)) for a, b in pairs))
            for i, pairs in enumerate(fusion.alignment, start=1)
        ]
    return se.run_fusion(
        plan_a,
        plan_b,
        settings,
        se.SwapConfig(fusion.effective_xi(), fusion.outcome),
        input_state_source(fusion),
        bsm_channel=fusion.bsm_channel,
        xi_per_pair=fusion.xi_per_pair or None,
    )


def analyze_swap_report(cfg: ScenarioConfig, out: Path, fmt: str) -> list[str]:
    report = swap_report(cfg)
    files = [_write_doc(out / "swap_report.json", {"kind": "swap_report", **report.to_dict()})]
    a_ch = sorted({r.a_channel for r in report.records})
    b_ch = sorted({r.b_channel for r in report.records})
    for field in ("fidelity", "visibility_da"):
        rows = [[a] + [f"{getattr(report.record(a, b), field):.6f}" for b in b_ch] for a in a_ch]
        name = f"swap_{field}.csv"
        files.append(_write_text(out / name, _csv_text(["A\\B"] + b_ch, rows)))
    return files


def _fringe_targets(cfg: ScenarioConfig) -> list[tuple[str, qs.DensityMatrix]]:
    vin = cfg.fusion.input_visibility if cfg.fusion is not None else 1.0
    targets = [("link", qs.werner_state(qs.BellKind.PHI_PLUS, vin))]
    if cfg.fusion is not None:
        report = swap_report(cfg)
        for r in report.records:
            if r.setting_index <= 2 and r.a_channel == min(x.a_channel for x in report.records):
                targets.append((f"swap_CH{r.a_channel}A_CH{r.b_channel}B", r.state))
    return targets


def analyze_fringes(cfg: ScenarioConfig, out: Path) -> list[str]:
    opts = cfg.analysis["fringes"]
    n = int(opts["points"])
    angles = np.linspace(0, np.pi, n, endpoint=False).tolist() + [np.pi]
    rng = np.random.default_rng(int(opts["seed"])) if opts.get("seed") is not None else None
    rows, results = [], []
    for label, rho in _fringe_targets(cfg):
        for basis in ("H", "D"):
            scan = an.fringe_scan_from_state(
                rho, basis, angles, float(opts["peak_rate"]), float(opts["integration_s"]), rng=rng
            )
            for th, c, t in zip(scan.angles, scan.counts, scan.integration_time):
                rows.append([label, basis, repr(th), c, repr(t)])
            fit = an.fringe_visibility(scan, "fit")
            ext = an.fringe_visibility(scan, "extrema")
            results.append(
                {
                    "label": label,
                    "basis": basis,
                    "fit": fit.to_dict(),
                    "extrema": ext.to_dict(),
                    "fidelity_from_fit": an.fidelity_from_visibility(min(fit.visibility, 1.0)),
                }
            )
    files = [
        _write_text(out / "fringes.csv", _csv_text(["label", "basis", "hwp_angle_rad", "count", "integration_s"], rows)),
        _write_doc(out / "fringes.json", {"kind": "fringes", "results": results}),
    ]
    return files


def analyze_hom(cfg: ScenarioConfig, out: Path) -> list[str]:
    opts = cfg.analysis["hom"]
    span, step = int(opts["delay_span_ps"]), int(opts["delay_step_ps"])
    delays = np.arange(-span, span + step, step)
    rt = float(opts["rt_counts"])
    rows, results = [], []
    for v0 in opts["v0"]:
        model = ps.HomModel(float(v0), float(opts["sigma_ps"]))
        counts = np.rint(rt * ps.hom_coincidence_curve(model, delays)).astype(int)
        rows += [[v0, int(d), int(c)] for d, c in zip(delays, counts)]
        fit, params = an.fit_hom_dip(delays, counts)
        edge = an.dip_visibility(float(counts[np.argmin(np.abs(delays))]), float(max(counts[0], counts[-1])))
        results.append({"v0": v0, "fit": fit.to_dict(), "fit_params": params, "endpoints": edge.to_dict()})
    return [
        _write_text(out / "hom.csv", _csv_text(["v0", "delay_ps", "count"], rows)),
        _write_doc(out / "hom.json", {"kind": "hom", "results": results}),
    ]


def cmd_analyze(cfg: ScenarioConfig, what: str, out: Path, tags_dir: Path | None, fmt: str = "json") -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    if what in ("matrix", "xcorr"):
        if tags_dir is None:
            raise ConfigError(f"'{what}' needs --tags DIR from a simulate run", "--tags")
        streams = load_streams(cfg, tags_dir)
        if what == "matrix":
            return analyze_matrix(cfg, streams, out, fmt)
        return analyze_xcorr(cfg, streams, out)
    if what == "fringes":
        return analyze_fringes(cfg, out)
    if what == "hom":
        return analyze_hom(cfg, out)
    if what == "swap-report":
        return analyze_swap_report(cfg, out, fmt)
    raise ConfigError(f"unknown analysis {what!r}", "--what")


def cmd_fuse(cfg: ScenarioConfig, out: Path | None, fmt: str = "json") -> list[str]:
    if out is None:
        report = swap_report(cfg)
        sys.stdout.write(json.dumps({"format_version": 1, "kind": "swap_report", **report.to_dict()}, indent=2) + "\n")
        return []
    out.mkdir(parents=True, exist_ok=True)
    return cmd_plan(cfg, out, fmt) + analyze_swap_report(cfg, out, fmt)


def cmd_report(cfg: ScenarioConfig, out: Path, fmt: str = "json") -> list[str]:
    """Every configured output into one directory, closed by a manifest."""
    out.mkdir(parents=True, exist_ok=True)
    wanted = cfg.run.outputs
    files: list[str] = []
    if "plan" in wanted:
        files += cmd_plan(cfg, out, fmt)
    if "simulate" in wanted:
        files += [f for f in cmd_simulate(cfg, out) if f != fio.MANIFEST]
        if "matrix" in wanted or "xcorr" in wanted:
            streams = {
                net.id: {c: fio.read_tags(out / fio.tag_file_name(net.id, c)) for c in net.channels}
                for net in cfg.networks
            }
            if "matrix" in wanted:
                files += analyze_matrix(cfg, streams, out, fmt)
            if "xcorr" in wanted:
                files += analyze_xcorr(cfg, streams, out)
    elif "matrix" in wanted:
        files += write_matrices(simulated_matrices(cfg), out, fmt)
    if "fringes" in wanted:
        files += analyze_fringes(cfg, out)
    if "hom" in wanted:
        files += analyze_hom(cfg, out)
    if "swap-report" in wanted and cfg.fusion is not None:
        files += analyze_swap_report(cfg, out, fmt)
    fio.write_manifest(out, files, cfg.hash(), cfg.run.seed)
    return files + [fio.MANIFEST]


# -- entry point --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="scenario JSON file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = _Parser(prog="netfusion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("plan", parents=[common], help="pump schedule and topology")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo tag streams")
    a = sub.add_parser("analyze", parents=[common], help="derived data products")
    a.add_argument("--what", choices=ANALYSES, required=True)
    a.add_argument("--tags", type=Path, help="directory of a simulate run")
    sub.add_parser("fuse", parents=[common], help="plan plus state-level swap report")
    sub.add_parser("report", parents=[common], help="all configured outputs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
        if args.command in ("simulate", "analyze", "report") and args.out is None:
            print(f"netfusion {args.command}: --out is required", file=sys.stderr)
            return EXIT_USAGE
        if args.command == "plan":
            files = cmd_plan(cfg, args.out, args.format)
        elif args.command == "simulate":
            files = cmd_simulate(cfg, args.out)
        elif args.command == "analyze":
            files = cmd_analyze(cfg, args.what, args.out, args.tags, args.format)
        elif args.command == "fuse":
            files = cmd_fuse(cfg, args.out, args.format)
        else:
            files = cmd_report(cfg, args.out, args.format)
    except ap.ScheduleInfeasibleError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, fio.FormatError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for f in files:
        print(args.out / f if args.out else f, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
