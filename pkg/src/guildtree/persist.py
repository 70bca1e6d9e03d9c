"""On-disk artifacts for fitted chains: draws table, checkpoint, manifest.

The draws table is plain CSV, one row per retained draw, floats written
with repr so reruns and read-backs are bit-exact.  Guild coefficients are
stored per period alongside the canonical partition encoding, rows
reordered to canonical group order so the pairing survives the round
trip.  A checkpoint (JSON plus one npz) captures the sampler state and
the generator state, letting an interrupted chain resume and produce a
byte-identical draws table.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from guildtree import __version__ as ENGINE_VERSION
from guildtree.core import (
    Coefficients,
    CommunityData,
    PosteriorDraw,
    encode_partition,
    parse_partition,
    tree_from_groups,
)
from guildtree.probit import ProbitState
from guildtree.zip_poisson import MetropolisTuner, ZipState

__all__ = [
    "DRAWS_FILE",
    "MANIFEST_FILE",
    "format_float",
    "data_checksum",
    "DrawWriter",
    "read_draws",
    "truncate_draws",
    "count_draw_rows",
    "write_manifest",
    "read_manifest",
    "save_checkpoint",
    "load_checkpoint",
    "has_checkpoint",
]

DRAWS_FILE = "draws.csv"
MANIFEST_FILE = "manifest.json"
_CHECKPOINT_JSON = "checkpoint.json"
_CHECKPOINT_NPZ = "checkpoint.npz"
_GAMMA_SEP = ";"


def format_float(x: float) -> str:
    """Shortest decimal form that parses back to the same float."""
    return repr(float(x))


def data_checksum(data: CommunityData) -> str:
    """Content hash of a dataset, independent of its file representation."""
    h = hashlib.sha256()
    h.update(data.responses.tobytes())
    h.update(data.predictors.tobytes())
    h.update("\x1f".join(data.species_names).encode())
    h.update("\x1f".join(data.predictor_names).encode())
    if data.period_index is not None:
        h.update(np.ascontiguousarray(data.period_index, dtype=np.int64).tobytes())
    if data.holdout_mask is not None:
        h.update(np.packbits(data.holdout_mask).tobytes())
    return h.hexdigest()


def _encoding_order(groups, names) -> list[int]:
    """Row permutation that matches the block order of the text encoding.

    The encoding sorts blocks by species name, so coefficient rows must be
    stored in that same order for the read-back to realign them.
    """
    return sorted(
        range(len(groups)), key=lambda i: sorted(names[j] for j in groups[i])
    )


def _canonical_gamma(draw: PosteriorDraw, t: int, names):
    """Groups in encoding order with gamma rows aligned to match."""
    tree = draw.trees[t]
    order = _encoding_order(tree.groups, names)
    groups = tuple(tree.groups[i] for i in order)
    return groups, draw.gammas[t][order, :]


def draws_columns(species, n_periods: int, family: str) -> list[str]:
    cols = ["draw"] + [f"alpha:{s}" for s in species]
    for t in range(1, n_periods + 1):
        cols += [f"partition_id:{t}", f"partition:{t}", f"gamma:{t}"]
    if family == "zip":
        cols += ["phi", "sigma2"]
    return cols


class DrawWriter:
    """Incremental draws-table writer with per-period partition ids.

    Ids number distinct partitions in order of first appearance; reopening
    in append mode rebuilds the numbering from the existing rows so a
    resumed chain continues it.
    """

    def __init__(self, path, species, n_periods: int, family: str, append: bool = False):
        self.path = Path(path)
        self.species = tuple(species)
        self.n_periods = n_periods
        self.family = family
        self.registries: list[dict[str, int]] = [{} for _ in range(n_periods)]
        self.rows_written = 0
        if append and self.path.exists():
            self._rebuild()
            self._fh = open(self.path, "a", newline="")
        else:
            self._fh = open(self.path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(draws_columns(self.species, n_periods, family))
            self._fh.flush()
            return
        self._writer = csv.writer(self._fh)

    def _rebuild(self) -> None:
        with open(self.path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                self.rows_written += 1
                for t in range(self.n_periods):
                    enc = row[f"partition:{t + 1}"]
                    reg = self.registries[t]
                    if enc not in reg:
                        reg[enc] = len(reg) + 1

    def _partition_id(self, t: int, encoding: str) -> int:
        reg = self.registries[t]
        if encoding not in reg:
            reg[encoding] = len(reg) + 1
        return reg[encoding]

    def write(self, draw: PosteriorDraw) -> None:
        row: list = [draw.draw_index]
        row += [format_float(a) for a in draw.alpha]
        for t in range(self.n_periods):
            canon, gamma = _canonical_gamma(draw, t, self.species)
            enc = encode_partition(canon, self.species)
            packed = _GAMMA_SEP.join(format_float(v) for v in gamma.T.ravel())
            row += [self._partition_id(t, enc), enc, packed]
        if self.family == "zip":
            row += [format_float(draw.phi), format_float(draw.sigma2)]
        self._writer.writerow(row)
        self._fh.flush()
        self.rows_written += 1

    def partition_tables(self) -> list[dict[str, int]]:
        return [dict(reg) for reg in self.registries]

    def close(self) -> None:
        self._fh.close()


def read_draws(path, species, family: str) -> list[PosteriorDraw]:
    """Rebuild retained draws from a draws table."""
    species = tuple(species)
    draws: list[PosteriorDraw] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty draws table")
        n_periods = sum(1 for c in reader.fieldnames if c.startswith("partition:"))
        for row in reader:
            alpha = np.array([float(row[f"alpha:{s}"]) for s in species])
            trees = []
            gammas = []
            for t in range(1, n_periods + 1):
                groups = parse_partition(row[f"partition:{t}"], species)
                flat = np.array(
                    [float(v) for v in row[f"gamma:{t}"].split(_GAMMA_SEP)]
                )
                g = len(groups)
                # Stored rows follow the encoding's name order; the parsed
                # groups are index-sorted, so undo the write-side permutation.
                order = _encoding_order(groups, species)
                gamma = np.empty((g, flat.size // g))
                gamma[order, :] = flat.reshape(-1, g).T
                gammas.append(gamma)
                trees.append(tree_from_groups(groups, len(species)))
            draws.append(
                PosteriorDraw(
                    coefficients=Coefficients(alpha=alpha, gammas=tuple(gammas)),
                    trees=tuple(trees),
                    draw_index=int(row["draw"]),
                    phi=float(row["phi"]) if family == "zip" else None,
                    sigma2=float(row["sigma2"]) if family == "zip" else None,
                )
            )
    return draws


def count_draw_rows(path) -> int:
    with open(path, newline="") as fh:
        return max(sum(1 for _ in fh) - 1, 0)


def truncate_draws(path, keep_rows: int) -> None:
    """Drop draws-table rows past ``keep_rows`` (header preserved)."""
    with open(path, newline="") as fh:
        lines = fh.readlines()
    with open(path, "w", newline="") as fh:
        fh.writelines(lines[: keep_rows + 1])


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def write_manifest(out_dir, manifest: dict) -> None:
    manifest = dict(manifest)
    manifest.setdefault("engine_version", ENGINE_VERSION)
    path = Path(out_dir) / MANIFEST_FILE
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(out_dir) -> dict:
    with open(Path(out_dir) / MANIFEST_FILE) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported generator {state['bit_generator']!r}")
    return {
        "bit_generator": "PCG64",
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_from_json(blob: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(blob["state"]), "inc": int(blob["inc"])},
        "has_uint32": int(blob["has_uint32"]),
        "uinteger": int(blob["uinteger"]),
    }
    return rng


def has_checkpoint(out_dir) -> bool:
    out = Path(out_dir)
    return (out / _CHECKPOINT_JSON).exists() and (out / _CHECKPOINT_NPZ).exists()


def save_checkpoint(
    out_dir,
    family: str,
    state,
    rng: np.random.Generator,
    iteration: int,
    retained: int,
    species,
) -> None:
    """Atomically persist the sampler state after ``retained`` draws.

    Trees and coefficient rows are stored in canonical group order; the
    reordering is invisible to the chain because every sweep re-learns the
    tree before using it.
    """
    out = Path(out_dir)
    species = tuple(species)
    n_periods = len(state.trees)
    encodings = []
    arrays: dict[str, np.ndarray] = {"alpha": state.alpha}
    for t in range(n_periods):
        tree = state.trees[t]
        order = _encoding_order(tree.groups, species)
        encodings.append(encode_partition(tree.groups, species))
        arrays[f"gamma{t}"] = state.gammas[t][order, :]
    meta = {
        "family": family,
        "iteration": iteration,
        "retained": retained,
        "n_periods": n_periods,
        "partitions": encodings,
        "rng": _rng_state_to_json(rng),
    }
    if family == "zip":
        arrays.update(
            z=state.z,
            w=state.w,
            log_sd=state.tuner.log_sd,
            accepted=state.tuner.accepted,
            attempted=state.tuner.attempted,
        )
        meta["phi"] = state.phi
        meta["sigma2"] = state.sigma2
        meta["tuner"] = {
            "batch": state.tuner.batch,
            "sweeps_in_batch": state.tuner.sweeps_in_batch,
            "batch_size": state.tuner.batch_size,
            "target": state.tuner.target,
        }

    tmp_npz = out / (_CHECKPOINT_NPZ + ".tmp")
    with open(tmp_npz, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp_npz, out / _CHECKPOINT_NPZ)
    tmp_json = out / (_CHECKPOINT_JSON + ".tmp")
    with open(tmp_json, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    os.replace(tmp_json, out / _CHECKPOINT_JSON)


def load_checkpoint(out_dir, data: CommunityData):
    """Restore (state, rng, iteration, retained) from a checkpoint."""
    out = Path(out_dir)
    with open(out / _CHECKPOINT_JSON) as fh:
        meta = json.load(fh)
    arrays = np.load(out / _CHECKPOINT_NPZ)
    species = data.species_names
    trees = []
    gammas = []
    for t, enc in enumerate(meta["partitions"]):
        groups = parse_partition(enc, species)
        trees.append(tree_from_groups(groups, data.n_species))
        stored = np.array(arrays[f"gamma{t}"])
        # Same realignment as read_draws: stored rows are in name order.
        order = _encoding_order(groups, species)
        gamma = np.empty_like(stored)
        gamma[order, :] = stored
        gammas.append(gamma)
    if meta["family"] == "zip":
        tuner = MetropolisTuner(
            log_sd=np.array(arrays["log_sd"]),
            accepted=np.array(arrays["accepted"]),
            attempted=np.array(arrays["attempted"]),
            batch=meta["tuner"]["batch"],
            sweeps_in_batch=meta["tuner"]["sweeps_in_batch"],
            batch_size=meta["tuner"]["batch_size"],
            target=meta["tuner"]["target"],
        )
        state = ZipState(
            alpha=np.array(arrays["alpha"]),
            trees=trees,
            gammas=gammas,
            z=np.array(arrays["z"]),
            w=np.array(arrays["w"]),
            phi=meta["phi"],
            sigma2=meta["sigma2"],
            tuner=tuner,
        )
    else:
        state = ProbitState(
            alpha=np.array(arrays["alpha"]), trees=trees, gammas=gammas
        )
    rng = _rng_from_json(meta["rng"])
    return state, rng, int(meta["iteration"]), int(meta["retained"])
