import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from tubeshell.core.config_manager import Config, parse_config, serialize_config
from tubeshell.core.errors import TubeshellError
from tubeshell.core.geometry import BentTube, GluedSurface, embed_glued, embed_tube
from tubeshell.core.models import ContinuationTrace, Grid2D, ScalarField, Trajectory
from tubeshell.core.nonlinearity import Nonlinearity
from tubeshell.core.operators import DiscreteOperator, matrix_triplets
from tubeshell.profiles.base import ProfileCurve
from tubeshell.utils.formatting import fmt, fmt_row

logger = logging.getLogger(__name__)

ARTIFACT_FILE = "artifacts.npz"
Surface = Union[ProfileCurve, BentTube, GluedSurface]


class ExportService:
    """Writes every tubeshell data file into one output directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def _path(self, name: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        return self.directory / name

    def _write_lines(self, name: str, lines: List[str]) -> Path:
        path = self._path(name)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.debug("wrote %s", path)
        return path

    def write_trace(self, trace: ContinuationTrace, name: str = "continuation.csv") -> Path:
        rows = [fmt_row((s.kappa, s.residual, s.lambda1, s.sup_gap)) for s in trace.steps]
        return self._write_lines(name, ["kappa,residual,lambda1,sup_gap"] + rows)

    def write_trajectory(self, trajectory: Trajectory, name: str = "trajectory.csv") -> Path:
        rows = [fmt_row(pair) for pair in zip(trajectory.times, trajectory.deviations)]
        return self._write_lines(name, ["t,sup_dev"] + rows)

    def write_field(self, u: ScalarField, name: str = "field.csv") -> Path:
        S, T = u.grid.mesh()
        rows = [fmt_row(row) for row in zip(S.ravel(), T.ravel(), u.values)]
        return self._write_lines(name, ["s,theta,u"] + rows)

    def write_nonlinearity(self, nl: Nonlinearity, name: str = "nonlinearity.csv") -> Path:
        rows = [fmt_row(row) for row in zip(nl.knots, nl.values, nl.slopes)]
        return self._write_lines(name, ["u,f,fp"] + rows)

    def write_matrix(self, op: DiscreteOperator, name: str = "stiffness.txt") -> Path:
        rows, cols, data = matrix_triplets(op)
        return self._write_lines(name, [f"{i} {j} {fmt(v)}" for i, j, v in zip(rows, cols, data)])

    def write_obj(self, surface: Surface, grid: Grid2D, name: str = "surface.obj") -> Path:
        """Quad mesh through the grid nodes; theta always wraps, s wraps on glued surfaces."""
        S, T = grid.mesh()
        if isinstance(surface, GluedSurface):
            points = embed_glued(surface, S, T)
        else:
            points = embed_tube(surface, S, T)
        lines = [f"# tubeshell mesh {grid.n_s}x{grid.n_theta}"]
        lines += [f"v {fmt(x)} {fmt(y)} {fmt(z)}" for x, y, z in points.reshape(-1, 3)]

        def vertex(i, j):
            return (i % grid.n_s) * grid.n_theta + (j % grid.n_theta) + 1

        s_cells = grid.n_s if grid.is_periodic else grid.n_s - 1
        if grid.n_theta > 1:
            for i in range(s_cells):
                for j in range(grid.n_theta):
                    lines.append(f"f {vertex(i, j)} {vertex(i + 1, j)} {vertex(i + 1, j + 1)} {vertex(i, j + 1)}")
        return self._write_lines(name, lines)

    def write_report(self, report, name: str = "report.json") -> Path:
        return self._write_lines(name, [report.to_json()])

    def save_artifacts(self, config: Config, fields: Dict[str, ScalarField], **extra) -> Path:
        """Store fields (with their grids) and the config so `export` can re-emit them."""
        arrays = {"config": np.array(serialize_config(config))}
        meta = {"fields": {}, "extra": {k: float(v) if isinstance(v, (float, np.floating)) else v for k, v in extra.items()}}
        for key, u in fields.items():
            arrays[f"field_{key}"] = u.values
            g = u.grid
            meta["fields"][key] = [g.n_s, g.n_theta, g.length, g.s_topology.value]
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        path = self._path(ARTIFACT_FILE)
        np.savez(path, **arrays)
        logger.info("stored artifacts in %s", path)
        return path

    def load_artifacts(self):
        path = self.directory / ARTIFACT_FILE
        if not path.is_file():
            raise TubeshellError(f"no stored artifacts in {self.directory}; run synth, continue, glue or verify first")
        with np.load(path, allow_pickle=False) as data:
            config = parse_config(str(data["config"]))
            meta = json.loads(str(data["meta"]))
            fields = {}
            for key, (n_s, n_theta, length, topology) in meta["fields"].items():
                grid = Grid2D.periodic(n_s, n_theta, length) if topology == "periodic" else Grid2D.interval(n_s, n_theta, length)
                fields[key] = ScalarField(grid, data[f"field_{key}"])
        return config, fields, meta["extra"]


def surface_for(profile: ProfileCurve, grid: Grid2D, n: Optional[int] = None, kappa: float = 0.0) -> Surface:
    if grid.is_periodic:
        return GluedSurface(profile, int(n), np.pi / (int(n) * profile.length))
    return BentTube(profile, kappa) if kappa else profile
