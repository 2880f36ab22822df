import json
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src.decoder.vision_decoder import VisionDecoder
from src.errors import FormatError
from src.numerics.tensor import precision
from src.state.model_state import ModelConfig

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
BLOB = "params.bin"
CONFIG = "model_config.json"


def save_checkpoint(decoder: VisionDecoder, directory: str | Path) -> Path:
    """Writes the parameter blob, its manifest and the model config into ``directory``."""
    directory = Path(directory)
    manifest = {}
    offset = 0
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / BLOB, "wb") as blob:
            for name, tensor in decoder.store.items():
                data = np.ascontiguousarray(tensor.data, dtype=tensor.data.dtype.newbyteorder("<"))
                raw = data.tobytes()
                manifest[name] = {
                    "shape": list(data.shape),
                    "dtype": data.dtype.str,
                    "byte_offset": offset,
                    "byte_len": len(raw),
                }
                blob.write(raw)
                offset += len(raw)
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=1))
        (directory / CONFIG).write_text(decoder.config.model_dump_json(indent=1))
    except OSError as e:
        raise FormatError(f"cannot write checkpoint {directory}: {e.strerror or e}") from e
    logger.info("saved %d parameters (%d bytes) to %s", len(manifest), offset, directory)
    return directory


def load_checkpoint(directory: str | Path) -> VisionDecoder:
    """Rebuilds a decoder; every stored array must match the shape its config implies."""
    directory = Path(directory)
    try:
        config = ModelConfig.model_validate_json((directory / CONFIG).read_text())
        manifest = json.loads((directory / MANIFEST).read_text())
        blob = (directory / BLOB).read_bytes()
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise FormatError(f"unreadable checkpoint {directory}: {e}") from e
    decoder = VisionDecoder(config)
    if not isinstance(manifest, dict):
        raise FormatError(f"{MANIFEST} in {directory} is not a parameter table")
    extra = set(manifest) - set(decoder.store)
    if extra:
        raise FormatError(f"checkpoint holds unknown parameters {sorted(extra)}")
    missing = set(decoder.store) - set(manifest)
    if missing:
        raise FormatError(f"checkpoint lacks parameters {sorted(missing)}")
    arrays = {}
    for name, entry in manifest.items():
        try:
            start, length = int(entry["byte_offset"]), int(entry["byte_len"])
            if start < 0 or start + length > len(blob):
                raise FormatError(f"parameter {name!r} runs past the end of {BLOB}")
            array = np.frombuffer(blob[start:start + length], dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad manifest entry for {name!r}: {e}") from e
        if array.shape != decoder.store[name].shape:
            raise FormatError(f"parameter {name!r} has shape {array.shape}, config implies {decoder.store[name].shape}")
        arrays[name] = array.astype(precision())
    decoder.store.load_arrays(arrays)
    logger.info("loaded %s checkpoint with %d parameters", directory, len(arrays))
    return decoder
