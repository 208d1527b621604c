import shutil
from pathlib import Path

import pytest

from coverify.corpus import Language
from coverify.executor import default_compile_spec
from coverify.harness import Backend
from coverify.verify import ToolchainRunner

SHIM_INCLUDE = Path(__file__).resolve().parents[1] / "include"

HAS_GXX = shutil.which("g++") is not None


@pytest.fixture(scope="session")
def shim_runner() -> ToolchainRunner:
    if not HAS_GXX:
        pytest.skip("g++ not available")
    include = [str(SHIM_INCLUDE)]
    return ToolchainRunner(
        {
            Language.C: default_compile_spec(Backend.NATIVE_C, include),
            Language.CUDA: default_compile_spec(Backend.CUDA_SHIM, include),
        }
    )
