#!/usr/bin/env python3
"""
Persistent verdict cache for nuggetprobe
Append-only JSONL store so repeated judge calls are never paid for twice
"""

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, Optional, Union

logger = logging.getLogger(__name__)

RECORD_FIELDS = ('key', 'decision', 'raw_response', 'backend_id', 'template_hash')


def generate_verdict_key(backend_id: str, template_name: str, template_hash: str, inputs: str) -> str:
    """
    Generate the cache key of one judge call

    Args:
        backend_id: Backend identity (kind and model)
        template_name: Prompt template name
        template_hash: Hash of the template body and system message
        inputs: Canonical serialization of every input text

    Returns:
        Hex SHA-256 digest
    """
    unique_string = '\x1f'.join([backend_id, template_name, template_hash, inputs])
    return hashlib.sha256(unique_string.encode('utf-8')).hexdigest()


class VerdictCache:
    """JSONL-backed verdict store; safe to share between worker threads"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        """
        Open (or create) a cache

        Args:
            path: JSONL file; None keeps the cache in memory only
        """
        self.path = Path(path) if path else None
        self.records: Dict[str, dict] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

        if self.path is not None:
            self._load()

    def _load(self):
        if not self.path.exists():
            return

        try:
            with open(self.path, 'r', encoding='utf-8') as f:
                for line_number, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if not isinstance(record, dict) or any(field not in record for field in RECORD_FIELDS) \
                            or not isinstance(record['decision'], bool):
                        raise ValueError(f"bad record on line {line_number}")
                    self.records[record['key']] = record
        except (ValueError, UnicodeDecodeError) as e:
            logger.warning(f"⚠️ Verdict cache {self.path} is corrupt ({e}); rebuilding from empty")
            self.records = {}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, 'w', encoding='utf-8'):
                pass
            return

        logger.info(f"✅ Verdict cache loaded: {len(self.records)} verdicts from {self.path}")

    def __len__(self) -> int:
        return len(self.records)

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            record = self.records.get(key)
            if record is None:
                self.misses += 1
            else:
                self.hits += 1
            return record

    def put(self, key: str, decision: bool, raw_response: str, backend_id: str, template_hash: str) -> dict:
        """Record one verdict; appends a line to the backing file"""
        record = {
            'key': key,
            'decision': decision,
            'raw_response': raw_response,
            'backend_id': backend_id,
            'template_hash': template_hash,
        }
        with self._lock:
            self.records[key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, 'a', encoding='utf-8') as f:
                    f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + '\n')
                    f.flush()
                    os.fsync(f.fileno())
        return record

    def get_stats(self) -> Dict:
        return {'verdicts': len(self.records), 'hits': self.hits, 'misses': self.misses}
