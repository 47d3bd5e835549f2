#!/usr/bin/env python3
"""
Configuration management for nuggetprobe
Environment defaults (via .env) plus the per-experiment configuration model
"""

import os
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator

from errors import ConfigError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ('1', 'true', 'yes')


class Config:
    """Environment-level defaults for nuggetprobe"""

    # Judge wire interface
    LLM_ENDPOINT = os.getenv('RAGE_LLM_ENDPOINT')
    LLM_API_KEY = os.getenv('RAGE_LLM_API_KEY')
    LLM_MODEL = os.getenv('RAGE_LLM_MODEL', 'llama-3.3-70b-instruct')
    GROQ_API_KEY = os.getenv('GROQ_API_KEY')
    JUDGE = os.getenv('RAGE_JUDGE', 'mock')

    # Prompts and verdict cache
    PROMPT_DIR = os.getenv('RAGE_PROMPT_DIR', str(Path(__file__).parent / 'prompts'))
    CACHE_PATH = os.getenv('RAGE_CACHE_PATH', '.cache/verdicts.jsonl')

    # Decoding
    MAX_TOKENS = int(os.getenv('RAGE_MAX_TOKENS', '512'))
    SEED = int(os.getenv('RAGE_SEED', '7'))
    TIMEOUT_SECONDS = int(os.getenv('RAGE_TIMEOUT', '60'))
    MAX_RETRIES = int(os.getenv('RAGE_MAX_RETRIES', '3'))

    # Pipeline
    CONCURRENCY = int(os.getenv('RAGE_CONCURRENCY', '4'))
    DEPTH = int(os.getenv('RAGE_DEPTH', '20'))
    MAX_NUGGETS = int(os.getenv('RAGE_MAX_NUGGETS', '10'))
    INCLUDE_CITATION_CONTEXT = _env_bool('RAGE_INCLUDE_CITATION_CONTEXT', 'true')

    LOG_LEVEL = os.getenv('RAGE_LOG_LEVEL', 'INFO')

    @classmethod
    def validate(cls, judge: Optional[str] = None, endpoint: Optional[str] = None) -> List[str]:
        """Validate configuration required by the chosen judge backend"""
        errors = []
        judge = judge or cls.JUDGE

        if judge == 'http':
            if not (endpoint or cls.LLM_ENDPOINT):
                errors.append("RAGE_LLM_ENDPOINT is required for the http judge")
            if not cls.LLM_MODEL:
                errors.append("RAGE_LLM_MODEL is required for the http judge")
        elif judge == 'groq':
            if not cls.GROQ_API_KEY:
                errors.append("GROQ_API_KEY is required for the groq judge")
        elif judge != 'mock':
            errors.append(f"Unknown judge backend: {judge}")

        if cls.CONCURRENCY < 1:
            errors.append("RAGE_CONCURRENCY must be >= 1")

        return errors

    @classmethod
    def print_config(cls):
        """Log current configuration (excluding sensitive data)"""
        logger.info("=" * 60)
        logger.info("nuggetprobe Configuration")
        logger.info("=" * 60)
        logger.info(f"Judge: {cls.JUDGE}")
        logger.info(f"Endpoint: {cls.LLM_ENDPOINT or 'Not Set'}")
        logger.info(f"Model: {cls.LLM_MODEL}")
        logger.info(f"API Key: {'***' + cls.LLM_API_KEY[-4:] if cls.LLM_API_KEY else 'Not Set'}")
        logger.info(f"Prompt dir: {cls.PROMPT_DIR}")
        logger.info(f"Verdict cache: {cls.CACHE_PATH}")
        logger.info(f"Depth: {cls.DEPTH}  Max system nuggets: {cls.MAX_NUGGETS}")
        logger.info(f"Concurrency: {cls.CONCURRENCY}  Seed: {cls.SEED}")
        logger.info("=" * 60)


# Variant label -> probes it enables
VARIANT_PROBES: Dict[str, List[str]] = {
    'base': [],
    'citation': ['citation'],
    'cov-sentence': ['cov-sentence'],
    'cov-extract': ['cov-extract'],
    'gold': ['gold'],
    'gold-filters': ['gold', 'cov-sentence', 'citation'],
}

PROBE_NAMES = ('citation', 'cov-sentence', 'cov-extract', 'gold')


def parse_probe_list(value: Optional[str]) -> List[str]:
    """Parse the comma list given to --probe"""
    if not value:
        return []
    probes = [item.strip() for item in value.split(',') if item.strip()]
    unknown = [p for p in probes if p not in PROBE_NAMES]
    if unknown:
        raise ConfigError(f"Unknown probe(s): {', '.join(unknown)} (choose from {', '.join(PROBE_NAMES)})")
    return probes


class ExperimentConfig(BaseModel):
    """Everything one experiment needs; echoed verbatim into the run manifest"""

    corpus: Optional[str] = None
    topics: Optional[str] = None
    nuggets: Optional[str] = None
    rankfile: Optional[str] = None
    depth: int = Field(default_factory=lambda: Config.DEPTH, ge=1)

    judge: Literal['mock', 'http', 'groq'] = Field(default_factory=lambda: Config.JUDGE)
    model: str = Field(default_factory=lambda: Config.LLM_MODEL)
    endpoint: Optional[str] = Field(default_factory=lambda: Config.LLM_ENDPOINT)
    prompt_dir: str = Field(default_factory=lambda: Config.PROMPT_DIR)
    cache_path: Optional[str] = Field(default_factory=lambda: Config.CACHE_PATH)
    max_tokens: int = Field(default_factory=lambda: Config.MAX_TOKENS)
    include_citation_context: bool = Field(default_factory=lambda: Config.INCLUDE_CITATION_CONTEXT)

    variant: str = 'base'
    probes: List[str] = Field(default_factory=list)
    length: Literal['short', 'medium', 'long'] = 'short'
    max_nuggets: int = Field(default_factory=lambda: Config.MAX_NUGGETS, ge=1)
    seed: int = Field(default_factory=lambda: Config.SEED)
    concurrency: int = Field(default_factory=lambda: Config.CONCURRENCY, ge=1)
    system_name: str = 'nuggetprobe'
    out: str = 'out'

    @model_validator(mode='after')
    def _check_prerequisites(self):
        if self.variant not in VARIANT_PROBES:
            raise ValueError(f"unknown variant {self.variant!r} (choose from {', '.join(VARIANT_PROBES)})")
        unknown = [p for p in self.probes if p not in PROBE_NAMES]
        if unknown:
            raise ValueError(f"unknown probe(s): {', '.join(unknown)}")
        if 'gold' in self.effective_probes and not self.nuggets:
            raise ValueError("gold nugget source requires a gold bank path (--nuggets)")
        return self

    @property
    def effective_probes(self) -> List[str]:
        """Variant probes plus explicitly requested ones, in canonical order"""
        wanted = set(VARIANT_PROBES.get(self.variant, [])) | set(self.probes)
        return [name for name in PROBE_NAMES if name in wanted]

    @property
    def nugget_source(self) -> str:
        return 'gold' if 'gold' in self.effective_probes else 'system'

    @property
    def retrieval(self) -> str:
        return 'rankfile' if self.rankfile else 'bm25'

    @property
    def variant_label(self) -> str:
        extra = [p for p in self.probes if p not in VARIANT_PROBES.get(self.variant, [])]
        return '+'.join([self.variant] + extra)


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Load an experiment config file (JSON or TOML)

    A run manifest is accepted too: its "config" section is used.

    Args:
        path: Path to .json or .toml file

    Returns:
        Dictionary of ExperimentConfig fields
    """
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"Config file not found: {path}")

    try:
        if file_path.suffix == '.toml':
            with open(file_path, 'rb') as f:
                data = tomllib.load(f)
        else:
            with open(file_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Could not parse config file {path}: {e}")

    if isinstance(data, dict) and isinstance(data.get('config'), dict):
        data = data['config']
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain an object")
    return data


def build_experiment_config(file_path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """
    Resolve an ExperimentConfig: file values, then flag overrides (flags win),
    then Config defaults for anything left unset

    Args:
        file_path: Optional config file
        **overrides: Flag values; None means "not given"

    Returns:
        Validated ExperimentConfig
    """
    values: Dict[str, Any] = load_config_file(file_path) if file_path else {}
    values.update({key: value for key, value in overrides.items() if value is not None})

    try:
        return ExperimentConfig(**values)
    except ValueError as e:
        raise ConfigError(f"Invalid experiment configuration: {e}")
