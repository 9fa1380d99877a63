"""A community-aware toy file service.

This is the enforcement point: every file operation runs the full pipeline
in order (verify credentials, site-versus-community check under the policy
signer's identity, community-versus-user check from the carried rights, then
the site's per-user blacklist) and acts on an in-memory object store only on
allow. Authorization is checked before object existence so denied callers
cannot probe the namespace.

Push mode expects the client to present community policy in its chain, either
as an embedded assertion or as a restriction on a chain rooted at the
community server. Pull mode takes a bare user chain and fetches a signed
rights listing from the authority or a mirror instead; any verification
failure, staleness, or source failure denies. No code path defaults to allow.
"""

from __future__ import annotations

import argparse
import logging
import signal
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from . import wire
from .assertions import extract_from_proxy, verify_assertion
from .canonical import from_hex, to_hex
from .credentials import (
    CredentialChain,
    chain_from_map,
    chain_to_map,
    load_anchors,
    load_chain,
    verify_chain,
)
from .errors import CasliteError, DeniedError, MalformedMessage, NotFound
from .keys import KeyMaterial
from .policy import (
    ACTIONS,
    EnforcementDecision,
    Identity,
    Right,
    SitePolicy,
    decide,
    load_group_rights,
    load_site,
    split_pattern,
    validate_concrete,
)
from .statements import StatementFetcher, listing_rights

logger = logging.getLogger(__name__)

PULL_NAMESPACE = "vo://**"


def _deny(stage: str, reason: str) -> EnforcementDecision:
    return EnforcementDecision(allow=False, stage=stage, reason=reason)


class ObjectStore:
    """Concrete object paths to byte strings, single mutation lock."""

    def __init__(self, initial: Mapping[str, bytes] | None = None):
        self._lock = threading.Lock()
        self._objects: dict[str, bytes] = dict(initial or {})
        for path in self._objects:
            validate_concrete(path)

    def read(self, path: str) -> bytes | None:
        with self._lock:
            return self._objects.get(path)

    def write(self, path: str, data: bytes) -> None:
        validate_concrete(path)
        with self._lock:
            self._objects[path] = data

    def delete(self, path: str) -> bool:
        with self._lock:
            return self._objects.pop(path, None) is not None

    def list_under(self, prefix: str) -> list[str]:
        with self._lock:
            return sorted(
                p for p in self._objects if p == prefix or p.startswith(prefix + "/")
            )

    def paths(self) -> list[str]:
        with self._lock:
            return sorted(self._objects)


@dataclass
class ResourceConfig:
    """One resource's standing configuration.

    ``anchors`` are the trust roots for verifying presented chains (typically
    the same CA that issued both user and community credentials). Membership
    mode enforcement needs ``group_rights`` to map asserted group names to
    locally configured rights. Pull mode needs ``pull_source`` and uses
    ``client_chain`` to authenticate its own queries to the source.
    """

    site: SitePolicy
    cas_public: KeyMaterial
    cas_identity: Identity
    anchors: tuple = ()
    mode: str = "push"
    pull_source: wire.Endpoint | str | None = None
    pull_namespace: str = PULL_NAMESPACE
    group_rights: Mapping[str, frozenset] | None = None
    client_chain: dict | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("push", "pull"):
            raise MalformedMessage(f"unknown enforcement mode {self.mode!r}")
        if self.mode == "pull" and self.pull_source is None:
            raise MalformedMessage("pull mode requires a pull_source")


def _unrestricted_for(obj: str) -> frozenset:
    # A chain from the community server with no restriction asserts the
    # community's full rights; model that as every action on the object's
    # whole scheme so the decision math stays a plain intersection.
    scheme, _, _ = split_pattern(obj)
    return frozenset(Right(a, f"{scheme}://**") for a in ACTIONS)


def enforce(
    cfg: ResourceConfig,
    chain: CredentialChain,
    action: str,
    obj: str,
    now: int,
) -> EnforcementDecision:
    """Run the four-stage pipeline for one push-mode request."""
    try:
        verified = verify_chain(chain, cfg.anchors, now)
    except CasliteError as exc:
        return _deny("credential", f"chain rejected: {exc.code}: {exc.message}")
    try:
        assertion = extract_from_proxy(chain)
    except CasliteError as exc:
        return _deny("credential", f"carried assertion unreadable: {exc.code}: {exc.message}")

    if assertion is not None:
        verdict = verify_assertion(assertion, cfg.cas_public, cfg.cas_identity, now)
        if not verdict.ok:
            return _deny("credential", f"assertion rejected: {verdict.failure}")
        if assertion.subject != verified.subject:
            return _deny(
                "credential",
                f"assertion subject {assertion.subject} does not match "
                f"authenticated identity {verified.subject}",
            )
        issuer = assertion.issuer
        user = verified.subject
        if assertion.mode == "rights":
            asserted = assertion.rights
        else:
            if cfg.group_rights is None:
                return _deny("vo_user", "membership assertion presented but no group "
                                        "rights are configured")
            asserted = frozenset()
            for name in assertion.groups:
                asserted |= cfg.group_rights.get(name, frozenset())
    elif verified.subject == cfg.cas_identity:
        # Restricted-proxy model: the only identity visible is the community
        # server's, so per-user site policy cannot distinguish the bearer.
        issuer = verified.subject
        user = verified.subject
        asserted = verified.effective_restriction
        if asserted is None:
            asserted = _unrestricted_for(obj)
    else:
        return _deny("credential", "chain carries no community policy")

    return decide(cfg.site, issuer, asserted, user, action, obj)


def pull_authorize(
    cfg: ResourceConfig,
    chain: CredentialChain,
    action: str,
    obj: str,
    now: int,
    fetcher: StatementFetcher,
) -> EnforcementDecision:
    """Authenticate a bare user chain and authorize it from a fetched rights
    listing. Raises SourceUnavailable/StaleStatement when no trustworthy
    listing can be had; both amount to deny."""
    try:
        verified = verify_chain(chain, cfg.anchors, now)
    except CasliteError as exc:
        return _deny("credential", f"chain rejected: {exc.code}: {exc.message}")
    statement = fetcher.current(now)
    asserted = listing_rights(statement, verified.subject)
    return decide(cfg.site, cfg.cas_identity, asserted, verified.subject, action, obj)


class ResourceService:
    """Enforcement plus the object store behind it."""

    def __init__(self, cfg: ResourceConfig, store: ObjectStore | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ObjectStore()
        self._fetcher: StatementFetcher | None = None
        if cfg.mode == "pull":
            self._fetcher = StatementFetcher(
                cfg.pull_source, cfg.pull_namespace, cfg.cas_public, cfg.client_chain
            )

    def authorize(self, chain: CredentialChain, action: str, obj: str, now: int) -> EnforcementDecision:
        if self.cfg.mode == "pull":
            return pull_authorize(self.cfg, chain, action, obj, now, self._fetcher)
        return enforce(self.cfg, chain, action, obj, now)

    def _authorize_or_raise(self, chain: CredentialChain, action: str, obj: str, now: int) -> None:
        decision = self.authorize(chain, action, obj, now)
        if not decision.allow:
            raise DeniedError(decision)

    def read(self, chain: CredentialChain, path: str, now: int | None = None) -> bytes:
        now = int(time.time()) if now is None else now
        self._authorize_or_raise(chain, "read", path, now)
        data = self.store.read(path)
        if data is None:
            raise NotFound(f"no object at {path}")
        return data

    def write(self, chain: CredentialChain, path: str, data: bytes, now: int | None = None) -> None:
        now = int(time.time()) if now is None else now
        self._authorize_or_raise(chain, "write", path, now)
        self.store.write(path, data)

    def delete(self, chain: CredentialChain, path: str, now: int | None = None) -> None:
        now = int(time.time()) if now is None else now
        self._authorize_or_raise(chain, "delete", path, now)
        if not self.store.delete(path):
            raise NotFound(f"no object at {path}")

    def list_paths(self, chain: CredentialChain, prefix: str, now: int | None = None) -> list[str]:
        now = int(time.time()) if now is None else now
        self._authorize_or_raise(chain, "list", prefix, now)
        return self.store.list_under(prefix)


class VaultServer:
    """Wire front end for a :class:`ResourceService`."""

    def __init__(self, listen: wire.Endpoint, service: ResourceService):
        self.service = service
        self._frame_server = wire.FrameServer(listen, self.handle)

    @property
    def endpoint(self) -> wire.Endpoint:
        return self._frame_server.endpoint

    def handle(self, kind: str, payload: dict, chain_doc: Any) -> dict:
        if kind == "ping":
            return {"identity": "vault", "mode": self.service.cfg.mode}
        if kind not in ("read", "write", "list", "delete"):
            raise MalformedMessage(f"unknown request kind {kind!r}")
        if chain_doc is None:
            raise MalformedMessage("file operations require a credential chain")
        chain = chain_from_map(chain_doc)
        if not isinstance(payload, dict) or "path" not in payload:
            raise MalformedMessage("payload needs a path")
        path = payload["path"]
        if kind == "read":
            data = self.service.read(chain, path)
            return {"path": path, "data": to_hex(data)}
        if kind == "write":
            if "data" not in payload:
                raise MalformedMessage("write payload needs data")
            data = from_hex(payload["data"])
            self.service.write(chain, path, data)
            return {"path": path, "size": len(data)}
        if kind == "list":
            return {"path": path, "paths": self.service.list_paths(chain, path)}
        self.service.delete(chain, path)
        return {"path": path, "deleted": True}

    def start(self) -> None:
        self._frame_server.start()
        logger.info("vault listening on %s", wire.format_endpoint(self.endpoint))

    def stop(self) -> None:
        self._frame_server.stop()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="caslite-vault", description="Run a community-aware file service."
    )
    parser.add_argument("--listen", required=True, help="HOST:PORT to listen on")
    parser.add_argument("--site", required=True, type=Path, help="site policy file")
    parser.add_argument("--cas-key", required=True, type=Path,
                        help="community server credential file (public part is used)")
    parser.add_argument("--mode", required=True, choices=("push", "pull"))
    parser.add_argument("--pull-source", default=None, help="HOST:PORT of authority or mirror")
    parser.add_argument("--pull-namespace", default=PULL_NAMESPACE,
                        help="namespace queried on the pull path; must match a "
                             "mirror subscription when pulling through one")
    parser.add_argument("--groups", type=Path, default=None,
                        help="group name to rights map for membership-mode assertions")
    parser.add_argument("--anchors", type=Path, default=None,
                        help="trust anchor file for verifying presented chains")
    parser.add_argument("--chain", type=Path, default=None,
                        help="client chain used to authenticate pull queries")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cas_chain = load_chain(args.cas_key)
    client_chain = None
    if args.chain is not None:
        client_chain = chain_to_map(load_chain(args.chain))
    cfg = ResourceConfig(
        site=load_site(args.site),
        cas_public=cas_chain.innermost_keys().public(),
        cas_identity=cas_chain.subject,
        anchors=load_anchors(args.anchors) if args.anchors else (),
        mode=args.mode,
        pull_source=wire.parse_endpoint(args.pull_source) if args.pull_source else None,
        pull_namespace=args.pull_namespace,
        group_rights=load_group_rights(args.groups) if args.groups else None,
        client_chain=client_chain,
    )
    server = VaultServer(wire.parse_endpoint(args.listen), ResourceService(cfg))
    server.start()
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass
    server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
