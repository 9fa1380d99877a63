#!/usr/bin/env python3
"""Timeline experiment: what the caching mirror serves while the authority is
up, after it dies, and after the cached statements age out.
"""

import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from caslite import wire
from caslite.cache import CacheConfig, CacheServer, StatementCache
from caslite.credentials import chain_to_map
from caslite.errors import ServerError
from caslite.server import CasServer, ServerConfig

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from worldlib import make_world  # noqa: E402

REFRESH = 1
MAX_AGE = 5
QUERY = {"query": "user_rights", "subject": "/VO=esg/CN=bob"}


def probe(mirror, label):
    try:
        wire.call(mirror.endpoint, "query", QUERY, timeout=2)
        print(f"  t={label:>5}  mirror answer: served")
        return True
    except (ServerError, OSError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        print(f"  t={label:>5}  mirror answer: {code}")
        return False


def main() -> int:
    world = make_world()
    tmp = Path(tempfile.mkdtemp(prefix="caslite-outage-"))
    paths = world.write_server_files(tmp)
    authority = CasServer(ServerConfig(
        listen=("127.0.0.1", 0), db_path=paths["db"],
        credential_path=paths["key"], anchors_path=paths["anchors"],
    ))
    authority.start()
    cache = StatementCache(CacheConfig(
        authority=authority.endpoint, refresh_interval=REFRESH, max_age=MAX_AGE,
        subscriptions=[QUERY], client_chain=chain_to_map(world.proxy("alice")),
    ))
    mirror = CacheServer(("127.0.0.1", 0), cache)
    mirror.start()
    print(f"authority {wire.format_endpoint(authority.endpoint)}, "
          f"mirror {wire.format_endpoint(mirror.endpoint)} "
          f"(refresh {REFRESH}s, max_age {MAX_AGE}s)")

    start = time.monotonic()
    tick = lambda: f"{time.monotonic() - start:.1f}s"
    print("\nauthority up:")
    probe(mirror, tick())

    print("\nkilling the authority; the mirror keeps serving its last statements:")
    authority.stop()
    killed = time.monotonic()
    while time.monotonic() - killed < MAX_AGE + 2.5:
        probe(mirror, tick())
        time.sleep(1)

    print("\npast max_age every answer fails closed, as above.")
    mirror.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
