import os

from dotenv import load_dotenv

from src.decoder.vision_decoder import VisionDecoder
from src.errors import PatchloomError, UsageError
from src.tools.checkpoint_tool import load_checkpoint


class DecoderLoader:
    def __init__(self):
        load_dotenv()

    def get_decoder(self, ckpt: str | None = None) -> VisionDecoder:
        try:
            self.ckpt = ckpt or os.getenv("PATCHLOOM_CKPT")
            if not self.ckpt:
                raise UsageError("no checkpoint given; pass --ckpt or set PATCHLOOM_CKPT")
            return load_checkpoint(self.ckpt)
        except PatchloomError:
            raise
        except Exception as e:
            raise UsageError(f"Error occurred with exception: {e}") from e
