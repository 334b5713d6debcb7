# snapshot.py
#
# Copyright 2026 The mpfm contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, in version 3 of the License.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
#

import os

import numpy as np

from mpfm.backend.flow.field import FlowModel, FlowSettings
from mpfm.backend.flow.prototype import GMPrototype
from mpfm.backend.logger import Logger
from mpfm.backend.models.errors import FormatVersionError
from mpfm.backend.models.result import Result
from mpfm.backend.nn.mlp import MLP
from mpfm.backend.params import SNAPSHOT_FORMAT, SNAPSHOT_VERSION
from mpfm.backend.scoring.heads import ScoringHeads
from mpfm.backend.utils import json

logging = Logger()

_LE_F8 = np.dtype("<f8")


class SnapshotManager:
    """
    Model snapshots as .npz containers: a JSON header entry plus one
    little-endian float64 array per parameter, so a save/load round trip
    reproduces every parameter bit for bit.
    """

    @staticmethod
    def header(model: FlowModel, heads: ScoringHeads) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "n_components": model.n_components,
            "dim": model.dim,
            "velocity_sizes": model.net.sizes,
            "activation": model.net.activation,
            "n_features": heads.n_features,
            "head_hidden": heads.hidden,
            "learn_weights": model.prototype.learn_weights,
            "learn_std": model.prototype.learn_std,
            "settings": model.settings.to_dict(),
        }

    @staticmethod
    def save(path: str, model: FlowModel, heads: ScoringHeads) -> str:
        arrays = {f"net/{k}": v.astype(_LE_F8) for k, v in model.net.state_dict().items()}
        arrays.update({f"heads/{k}": v.astype(_LE_F8) for k, v in heads.state_dict().items()})
        proto = model.prototype
        arrays["proto/log_weights"] = proto.log_weights.data.astype(_LE_F8)
        arrays["proto/weights"] = proto.weights.astype(_LE_F8)
        arrays["proto/means"] = np.ascontiguousarray(proto.means.data, dtype=_LE_F8)
        arrays["proto/std"] = proto.std_param.data.astype(_LE_F8)

        header = json.dumps(SnapshotManager.header(model, heads))
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            np.savez(f, header=np.array(header), **arrays)
        logging.debug(f"Snapshot written to {path}")
        return path

    @staticmethod
    def load(path: str) -> tuple[FlowModel, ScoringHeads]:
        with np.load(path, allow_pickle=False) as npz:
            if "header" not in npz.files:
                raise FormatVersionError(f"{path} is not a model snapshot")
            header = json.loads(str(npz["header"]))
            if header.get("format") != SNAPSHOT_FORMAT:
                raise FormatVersionError(f"{path} is not a model snapshot")
            if header.get("version") != SNAPSHOT_VERSION:
                raise FormatVersionError(
                    f"Snapshot version {header.get('version')} is not supported "
                    f"(expected {SNAPSHOT_VERSION})"
                )
            arrays = {name: npz[name] for name in npz.files if name != "header"}

        proto = GMPrototype(
            arrays["proto/weights"],
            arrays["proto/means"],
            float(arrays["proto/std"]),
            learn_weights=header["learn_weights"],
            learn_std=header["learn_std"],
        )
        proto.log_weights.data = arrays["proto/log_weights"].astype(proto.log_weights.data.dtype)
        proto.std_param.data = arrays["proto/std"].astype(proto.std_param.data.dtype)

        net = MLP(header["velocity_sizes"], header["activation"], name="velocity")
        net.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("net/")})
        model = FlowModel(net, proto, FlowSettings(**header["settings"]))

        heads = ScoringHeads(
            header["n_features"], header["dim"], header["head_hidden"], header["activation"]
        )
        heads.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("heads/")})
        return model, heads

    @staticmethod
    def try_load(path: str) -> Result[tuple[FlowModel, ScoringHeads]]:
        if not os.path.exists(path):
            return Result(False, message=f"Snapshot {path} does not exist", error=FileNotFoundError)
        try:
            return Result(True, data=SnapshotManager.load(path))
        except (FormatVersionError, KeyError, ValueError) as e:
            return Result(False, message=str(e), error=type(e))
