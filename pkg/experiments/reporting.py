"""
Aggregation of results and training logs into the plain-text report.

Tables are plain data; `experiments/report.txt` lays them out.
"""

from dataclasses import dataclass, field

from django.template.loader import render_to_string

LABEL_WIDTH = 22
CELL_WIDTH = 12


def _cell(value):
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


@dataclass
class Table:
    """
    Attributes:
        columns (list[str]): Column headings after the row label.
        rows (list[tuple[str, list]]): (label, one value per column).
        notes (list[str]): Free text lines under the table.
    """

    title: str
    columns: list
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def header(self):
        return "".ljust(LABEL_WIDTH) + "".join(c.rjust(CELL_WIDTH) for c in self.columns)

    @property
    def rule(self):
        return "-" * (LABEL_WIDTH + CELL_WIDTH * len(self.columns))

    @property
    def lines(self):
        return [
            label.ljust(LABEL_WIDTH) + "".join(_cell(v).rjust(CELL_WIDTH) for v in values)
            for label, values in self.rows
        ]

    def to_dict(self):
        return {
            "title": self.title,
            "columns": self.columns,
            "rows": [{"label": label, "values": values} for label, values in self.rows],
            "notes": self.notes,
        }


def _ordered(values):
    seen = []
    for value in values:
        if value not in seen:
            seen.append(value)
    return seen


def sre_table(records):
    """Top-1 IDR per speaker system and condition, with the CDF - IDF gap."""
    conditions = _ordered(r["condition"] for r in records)
    systems = _ordered(r["system"] for r in records)
    idr = {(r["system"], r["condition"]): r["idr_percent"] for r in records}
    table = Table("Speaker identification, Top-1 IDR (%)", conditions)
    for system in systems:
        table.rows.append((f"d-vector ({system})", [idr.get((system, c)) for c in conditions]))
    if {"idf", "cdf"} <= set(systems):
        table.rows.append(("cdf - idf", [
            None if idr.get(("cdf", c)) is None or idr.get(("idf", c)) is None
            else idr[("cdf", c)] - idr[("idf", c)]
            for c in conditions
        ]))
    n_speakers = {r.get("n_speakers") for r in records} - {None}
    if len(n_speakers) == 1:
        n = n_speakers.pop()
        table.notes.append(f"{n} enrolled speakers, chance rate {100.0 / n:.2f}%")
    trials = {(r["condition"], r["n_trials"]) for r in records}
    table.notes.append("trials: " + ", ".join(f"{c} {n}" for c, n in sorted(trials)))
    return table


def aer_tables(records):
    """One table per scoring level: ACC and MAP on the train and eval splits, plus gains."""
    systems = _ordered(r["system"] for r in records)
    splits = _ordered(r["split"] for r in records)
    tables = []
    for level in _ordered(r["level"] for r in records):
        found = {(r["system"], r["split"]): r for r in records if r["level"] == level}
        columns = [f"{split} {metric}" for split in splits for metric in ("ACC", "MAP")]
        table = Table(f"Emotion recognition, {level} level (%)", columns)
        for system in systems:
            values = []
            for split in splits:
                record = found.get((system, split), {})
                values += [record.get("acc_percent"), record.get("map_percent")]
            table.rows.append((f"AER ({system})", values))
        baseline = found.get(("baseline", splits[-1]))
        if baseline:
            for system in systems:
                record = found.get((system, splits[-1]))
                if system == "baseline" or not record:
                    continue
                table.notes.append(
                    f"{system} vs baseline on {splits[-1]}: "
                    f"ACC {record['acc_percent'] - baseline['acc_percent']:+.2f}, "
                    f"MAP {record['map_percent'] - baseline['map_percent']:+.2f}"
                )
        tables.append(table)
    return tables


def _epoch_losses(log, split):
    return {r["epoch"]: r["loss"] for r in log if r["split"] == split}


def recon_table(records, log):
    """Reconstruction losses: the dev drop from epoch 0, eval against dev, and the baseline."""
    table = Table("Spectrum reconstruction (mean frame square error)", ["value"])
    dev = _epoch_losses(log or [], "dev")
    if dev:
        first, last = dev[min(dev)], dev[max(dev)]
        table.rows += [
            ("dev loss, epoch 0", [first]),
            (f"dev loss, epoch {max(dev)}", [last]),
            ("dev drop ratio", [first / last if last else None]),
        ]
    by_split = {r["split"]: r for r in records if r["split"] in ("dev", "eval")}
    if "eval" in by_split:
        evaluated = by_split["eval"]
        table.rows += [
            ("eval loss", [evaluated["mean_frame_square_error"]]),
            ("eval baseline loss", [evaluated.get("baseline_square_error")]),
            ("beats baseline on all", [evaluated.get("beats_baseline_everywhere")]),
        ]
        if "dev" in by_split and by_split["dev"]["mean_frame_square_error"]:
            ratio = evaluated["mean_frame_square_error"] / by_split["dev"]["mean_frame_square_error"]
            table.rows.append(("eval / dev ratio", [ratio]))
    for record in records:
        if record["split"] == "resynthesis":
            table.notes.append(
                f"resynthesized {record['utt_id']}: {record['frames']} frames, "
                f"spectral error {record['mean_square_error']:.2f}"
            )
    return table


def training_table(logs):
    """Last epoch of every training log."""
    table = Table("Training", ["epochs", "train loss", "dev loss", "dev acc %"])
    for name, log in logs.items():
        if not log:
            continue
        train, dev = _epoch_losses(log, "train"), _epoch_losses(log, "dev")
        accuracy = [r["accuracy"] for r in log if r["split"] == "dev" and "accuracy" in r]
        table.rows.append((name, [
            max(train) if train else None,
            train[max(train)] if train else None,
            dev[max(dev)] if dev else None,
            100.0 * accuracy[-1] if accuracy else None,
        ]))
    return table


def build_report(results, logs):
    """
    Args:
        results (dict[str, list[dict]]): "sre", "aer" and "recon" result
            records; any may be absent.
        logs (dict[str, list[dict]]): Training log name -> records.

    Returns:
        list[Table]
    """
    tables = []
    if results.get("sre"):
        tables.append(sre_table(results["sre"]))
    if results.get("aer"):
        tables += aer_tables(results["aer"])
    if results.get("recon"):
        tables.append(recon_table(results["recon"], logs.get("recon")))
    if logs:
        tables.append(training_table(logs))
    return tables


def render_report(tables, config_hash, version, mixed_hashes=()):
    return render_to_string("experiments/report.txt", {
        "tables": tables,
        "config_hash": config_hash,
        "version": version,
        "mixed_hashes": list(mixed_hashes),
    })
