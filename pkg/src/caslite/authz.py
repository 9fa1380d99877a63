"""A local yes/no authorization service.

Resources that do not want community-policy logic inline can forward the
requester's identity, attributes, request, and any presented assertion here
and act on the answer: the decision point is factored out of the enforcement
point. Queries are stateless apart from an optional pull-path statement
cache, and infrastructure failures come back as deny answers with reasons
rather than errors, so callers stay fail-closed by construction.

Attributes are accepted and logged but take no part in the core decision;
group semantics already arrive inside assertions. Deploy one of these per
resource host: the answer is only as trustworthy as the channel to it.
"""

from __future__ import annotations

import argparse
import logging
import signal
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import wire
from .assertions import PolicyAssertion, assertion_from_map, verify_assertion
from .credentials import load_chain, chain_to_map
from .errors import MalformedMessage, SourceUnavailable, StaleStatement
from .keys import KeyMaterial
from .policy import (
    Identity,
    SitePolicy,
    decide,
    load_site,
    validate_action,
    validate_concrete,
    validate_identity,
)
from .statements import StatementFetcher, listing_rights

logger = logging.getLogger(__name__)

PULL_NAMESPACE = "vo://**"


@dataclass(frozen=True)
class DecisionQuery:
    identity: Identity
    action: str
    object: str
    attributes: frozenset = frozenset()
    assertion: PolicyAssertion | None = None

    def __post_init__(self) -> None:
        validate_identity(self.identity)
        validate_action(self.action)
        validate_concrete(self.object)
        seen = set()
        for attr in self.attributes:
            name, sep, _ = attr.partition("=")
            if not sep or not name:
                raise MalformedMessage(f"attribute must be name=value: {attr!r}")
            if name in seen:
                raise MalformedMessage(f"duplicate attribute name {name!r}")
            seen.add(name)


@dataclass(frozen=True)
class DecisionAnswer:
    allow: bool
    reason: str

    def __post_init__(self) -> None:
        if not self.allow and not self.reason:
            raise MalformedMessage("a deny answer needs a reason")


def decide_local(
    q: DecisionQuery,
    site: SitePolicy,
    cas_public: KeyMaterial,
    cas_identity: Identity,
    now: int,
    fetcher: StatementFetcher | None = None,
) -> DecisionAnswer:
    """Combine local and community policy into one yes/no answer.

    A presented assertion is verified and bound to the query identity before
    use. Without one, a configured pull source supplies the community half;
    with neither, the answer is deny.
    """
    if q.attributes:
        logger.debug("attributes for %s ignored by core decision: %s",
                     q.identity, sorted(q.attributes))
    if q.assertion is not None:
        verdict = verify_assertion(q.assertion, cas_public, cas_identity, now)
        if not verdict.ok:
            return DecisionAnswer(allow=False, reason=f"assertion rejected: {verdict.failure}")
        if q.assertion.subject != q.identity:
            return DecisionAnswer(
                allow=False,
                reason=f"assertion subject {q.assertion.subject} does not match "
                       f"query identity {q.identity}",
            )
        if q.assertion.mode != "rights":
            return DecisionAnswer(
                allow=False,
                reason="membership assertions need a local group rights map, "
                       "which this service does not carry",
            )
        asserted = q.assertion.rights
        issuer = q.assertion.issuer
    elif fetcher is not None:
        try:
            statement = fetcher.current(now)
        except (SourceUnavailable, StaleStatement) as exc:
            return DecisionAnswer(allow=False, reason=f"{exc.code}: {exc.message}")
        asserted = listing_rights(statement, q.identity)
        issuer = cas_identity
    else:
        return DecisionAnswer(allow=False, reason="no community policy available")

    decision = decide(site, issuer, asserted, q.identity, q.action, q.object)
    if decision.allow:
        return DecisionAnswer(allow=True, reason="ok")
    return DecisionAnswer(allow=False, reason=f"{decision.stage}: {decision.reason}")


def query_from_payload(payload: Any) -> DecisionQuery:
    if not isinstance(payload, dict):
        raise MalformedMessage("decision payload must be a map")
    allowed = {"identity", "attributes", "action", "object", "assertion"}
    required = {"identity", "action", "object"}
    if not required <= set(payload) or not set(payload) <= allowed:
        raise MalformedMessage("decision payload needs identity, action and object")
    attributes = payload.get("attributes", [])
    if not isinstance(attributes, list):
        raise MalformedMessage("attributes must be a list")
    assertion = None
    if "assertion" in payload:
        assertion = assertion_from_map(payload["assertion"])
    return DecisionQuery(
        identity=payload["identity"],
        attributes=frozenset(attributes),
        action=payload["action"],
        object=payload["object"],
        assertion=assertion,
    )


@dataclass
class AuthzConfig:
    site: SitePolicy
    cas_public: KeyMaterial
    cas_identity: Identity
    pull_source: wire.Endpoint | str | None = None
    pull_namespace: str = PULL_NAMESPACE
    client_chain: dict | None = None


class AuthzServer:
    def __init__(self, listen: wire.Endpoint, cfg: AuthzConfig):
        self.cfg = cfg
        self._fetcher: StatementFetcher | None = None
        if cfg.pull_source is not None:
            self._fetcher = StatementFetcher(
                cfg.pull_source, cfg.pull_namespace, cfg.cas_public, cfg.client_chain
            )
        self._frame_server = wire.FrameServer(listen, self.handle)

    @property
    def endpoint(self) -> wire.Endpoint:
        return self._frame_server.endpoint

    def handle(self, kind: str, payload: dict, chain_doc: Any) -> dict:
        if kind == "ping":
            return {"identity": "authz", "pull": self._fetcher is not None}
        if kind != "decide":
            raise MalformedMessage(f"unknown request kind {kind!r}")
        query = query_from_payload(payload)
        answer = decide_local(
            query, self.cfg.site, self.cfg.cas_public, self.cfg.cas_identity,
            now=int(time.time()), fetcher=self._fetcher,
        )
        return {"allow": answer.allow, "reason": answer.reason}

    def start(self) -> None:
        self._frame_server.start()
        logger.info("decision service listening on %s", wire.format_endpoint(self.endpoint))

    def stop(self) -> None:
        self._frame_server.stop()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="caslite-authz", description="Run a local authorization decision service."
    )
    parser.add_argument("--listen", required=True, help="HOST:PORT to listen on")
    parser.add_argument("--site", required=True, type=Path, help="site policy file")
    parser.add_argument("--cas-key", required=True, type=Path,
                        help="community server credential file (public part is used)")
    parser.add_argument("--pull-source", default=None, help="HOST:PORT of authority or mirror")
    parser.add_argument("--pull-namespace", default=PULL_NAMESPACE,
                        help="namespace queried on the pull path; must match a "
                             "mirror subscription when pulling through one")
    parser.add_argument("--chain", type=Path, default=None,
                        help="client chain used to authenticate pull queries")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cas_chain = load_chain(args.cas_key)
    cfg = AuthzConfig(
        site=load_site(args.site),
        cas_public=cas_chain.innermost_keys().public(),
        cas_identity=cas_chain.subject,
        pull_source=wire.parse_endpoint(args.pull_source) if args.pull_source else None,
        pull_namespace=args.pull_namespace,
        client_chain=chain_to_map(load_chain(args.chain)) if args.chain else None,
    )
    server = AuthzServer(wire.parse_endpoint(args.listen), cfg)
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
