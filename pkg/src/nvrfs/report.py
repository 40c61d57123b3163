"""Structured report emitted by every CLI command.

Reports serialize deterministically (sorted keys, no wall-clock fields)
so fixed fixtures plus fixed flags produce byte-identical output, which
the test suite relies on for golden comparisons.
"""

import json
import os
from dataclasses import dataclass, field
from typing import List

TOOL_NAME = "nvrfs"


@dataclass
class Report:
    version: str
    command: str
    image: dict
    findings: dict
    warnings: List[str] = field(default_factory=list)
    tool: str = TOOL_NAME

    def to_json(self) -> str:
        payload = {
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "image": self.image,
            "findings": self.findings,
            "warnings": self.warnings,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def image_fingerprint(handle, machine=None) -> dict:
    fp = {
        "name": os.path.basename(handle.path),
        "size_bytes": handle.size_bytes,
        "sector_size": handle.sector_size,
    }
    if machine is not None:
        fp["device_id"] = machine.device_id
        fp["model_name"] = machine.model_name
    return fp


def hexint(value: int) -> str:
    return f"0x{value:X}"
