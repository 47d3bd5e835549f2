# Persistence package: the judge verdict cache
from database.verdict_cache import VerdictCache, generate_verdict_key

__all__ = ['VerdictCache', 'generate_verdict_key']
