"""
Sample Store

Persists campaign output next to each other in one directory:
- samples_<hash>_eps<k>.jsonl[.gz]: one exit record per line, ordered by trajectory id
- summary_<hash>.json: counts, predictions, fits and the resolved config

The hash covers the campaign config without output paths, execution knobs
and metadata, so reruns of the same campaign overwrite the same files.
"""

import copy
import gzip
import hashlib
import io
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Generator, IO, Iterable

import pandas as pd

from src.utils.errors import StorageError

logger = logging.getLogger(__name__)

HASH_EXCLUDED = ('output', 'metadata', 'source_path')


def config_hash(campaign: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON of the campaign minus excluded keys."""
    content = copy.deepcopy({k: v for k, v in campaign.items() if k not in HASH_EXCLUDED})
    content.get('simulation', {}).pop('threads', None)
    engine = content.get('engine', {})
    engine.pop('paths', None)
    engine.pop('logging', None)
    engine.get('simulation', {}).pop('threads', None)
    canonical = json.dumps(content, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@contextmanager
def open_stream(path: Path, mode: str = 'r') -> Generator[IO, None, None]:
    """
    Open a text stream, gzip-compressed when the name ends in .gz.

    Gzip headers carry no timestamp or file name, so equal content gives equal bytes.
    """
    path = Path(path)
    try:
        if path.suffix == '.gz':
            raw = open(path, mode + 'b')
            zipped = gzip.GzipFile(filename='', fileobj=raw, mode=mode + 'b', mtime=0)
            stream = io.TextIOWrapper(zipped, encoding='utf-8', newline='\n')
            try:
                yield stream
            finally:
                stream.close()
                raw.close()
        else:
            with open(path, mode, encoding='utf-8', newline='\n') as stream:
                yield stream
    except FileNotFoundError as e:
        raise StorageError(f"missing file: {path}") from e


class SampleStore:
    """
    File layout for one campaign.

    Args:
        out_dir: output directory (created on first write)
        digest: config hash; the first 12 hex digits go into file names
        compress: write samples gzip-compressed
    """

    def __init__(self, out_dir: Path, digest: str, compress: bool = False):
        self.out_dir = Path(out_dir)
        self.digest = digest
        self.compress = compress

    @property
    def tag(self) -> str:
        return self.digest[:12]

    def samples_path(self, eps_index: int) -> Path:
        suffix = '.jsonl.gz' if self.compress else '.jsonl'
        return self.out_dir / f"samples_{self.tag}_eps{eps_index:02d}{suffix}"

    def summary_path(self) -> Path:
        return self.out_dir / f"summary_{self.tag}.json"

    def write_samples(self, eps_index: int, records: Iterable[Dict]) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.samples_path(eps_index)
        count = 0
        with open_stream(path, 'w') as stream:
            for record in records:
                stream.write(json.dumps(record, separators=(',', ':')) + '\n')
                count += 1
        logger.info(f"💾 Wrote {count} exit records to {path.name}")
        return path

    def write_summary(self, summary: Dict[str, Any]) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.summary_path()
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
        logger.info(f"💾 Wrote summary to {path.name}")
        return path


def read_summary(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"summary not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise StorageError(f"corrupt summary {path}: {e}") from e


def read_samples(path) -> pd.DataFrame:
    """Exit records as a DataFrame (columns trajectory_id, epsilon, time, location, face)."""
    path = Path(path)
    if not path.exists():
        raise StorageError(f"sample file not found: {path}")
    with open_stream(path, 'r') as stream:
        text = stream.read()
    if not text.strip():
        return pd.DataFrame(columns=['trajectory_id', 'epsilon', 'time', 'location', 'face'])
    try:
        return pd.read_json(io.StringIO(text), lines=True, precise_float=True)
    except ValueError as e:
        raise StorageError(f"corrupt sample file {path}: {e}") from e
