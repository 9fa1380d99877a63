"""The community authority over the wire: handlers, audit, persistence."""

from __future__ import annotations

import json
import threading

import pytest

from caslite import wire
from caslite.assertions import assertion_from_map
from caslite.credentials import CredentialChain, chain_from_map, chain_to_map, issue_proxy
from caslite.errors import ServerError
from caslite.policy import load_database, db_canonical_bytes
from caslite.server import CasServer, ServerConfig
from caslite.statements import statement_from_map, verify_statement

from worldlib import ALICE, BOB, CAROL, CAS, DAY, NOW, OWNER, rights


def chain_doc(world, short):
    return chain_to_map(world.proxy(short))


def audit_lines(server):
    path = str(server.config.db_path) + ".audit"
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle]


def test_ping_reports_identity_and_revision(world, cas_server):
    body = wire.call(cas_server.endpoint, "ping")
    assert body == {"identity": CAS, "revision": 1, "vo_name": "esg"}


def test_get_credential_binds_to_the_caller(world, cas_server):
    body = wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
                     chain=chain_doc(world, "alice"))
    assertion = assertion_from_map(body["assertion"])
    assert assertion.subject == ALICE
    assert assertion.issuer == CAS
    assert assertion.db_revision == 1


def test_membership_mode_over_the_wire(world, cas_server):
    body = wire.call(cas_server.endpoint, "get_credential",
                     {"mode": "assertion", "assertion_mode": "membership"},
                     chain=chain_doc(world, "alice"))
    assertion = assertion_from_map(body["assertion"])
    assert assertion.mode == "membership"
    assert assertion.groups == frozenset({"publishers"})
    assert assertion.rights is None


def test_non_member_with_valid_chain(world, cas_server):
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
                  chain=chain_doc(world, "carol"))
    assert info.value.code == "NotAMember"


def test_expired_chain_fails_before_policy(world, cas_server):
    expired = issue_proxy(
        CredentialChain(eec=world.eec("carol")), (NOW - 3600, NOW - 1800)
    )
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
                  chain=chain_to_map(expired))
    assert info.value.code == "AuthFailed"
    assert "Expired" in info.value.message


def test_missing_chain_is_auth_failure(world, cas_server):
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "query",
                  {"query": "user_rights", "subject": BOB})
    assert info.value.code == "AuthFailed"


def test_restricted_mode_returns_deliverable_chain(world, cas_server):
    body = wire.call(cas_server.endpoint, "get_credential",
                     {"mode": "restricted_proxy", "lifetime": 3600},
                     chain=chain_doc(world, "alice"))
    chain = chain_from_map(body["chain"])
    assert chain.subject == CAS
    assert chain.innermost_keys().private_part is not None
    assert chain.eec.keys.private_part is None  # the authority's key stays home


def test_lifetime_gate_over_the_wire(world, cas_server):
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "get_credential",
                  {"mode": "assertion", "lifetime": 2 * DAY},
                  chain=chain_doc(world, "alice"))
    assert info.value.code == "LifetimeTooLong"


def test_admin_read_your_writes(world, cas_server):
    body = wire.call(cas_server.endpoint, "admin", {"command": {
        "op": "grant", "subject": BOB, "action": "write",
        "object": "vo://esg/data/public/**",
    }}, chain=chain_doc(world, "admin-ann"))
    assert body["revision"] == 2
    cred = wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
                     chain=chain_doc(world, "bob"))
    assertion = assertion_from_map(cred["assertion"])
    assert assertion.db_revision == 2
    assert rights(("write", "vo://esg/data/public/**")) <= assertion.rights


def test_admin_denial_leaves_revision_alone(world, cas_server):
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "admin", {"command": {
            "op": "grant", "subject": BOB, "action": "write",
            "object": "vo://esg/data/private/**",
        }}, chain=chain_doc(world, "admin-ann"))
    assert info.value.code == "NotAuthorized"
    assert wire.call(cas_server.endpoint, "ping")["revision"] == 1
    assert load_database(cas_server.config.db_path).revision == 1


def test_query_user_rights_statement(world, cas_server):
    body = wire.call(cas_server.endpoint, "query",
                     {"query": "user_rights", "subject": BOB},
                     chain=chain_doc(world, "alice"))
    statement = statement_from_map(body["statement"])
    assert verify_statement(statement, world.cas.keys.public())
    assertion = assertion_from_map(statement.body["assertion"])
    assert assertion.subject == BOB
    assert assertion.rights == rights(("read", "vo://esg/data/public/**"))


def test_query_unknown_subject(world, cas_server):
    with pytest.raises(ServerError) as info:
        wire.call(cas_server.endpoint, "query",
                  {"query": "user_rights", "subject": CAROL},
                  chain=chain_doc(world, "alice"))
    assert info.value.code == "UnknownSubject"


def test_query_resource_rights_listing(world, cas_server):
    body = wire.call(cas_server.endpoint, "query",
                     {"query": "resource_rights", "namespace": "vo://esg/data/public/**"},
                     chain=chain_doc(world, "alice"))
    statement = statement_from_map(body["statement"])
    listing = statement.body["listing"]
    assert set(listing) == {ALICE, BOB}
    assert listing[ALICE] == [
        {"action": "read", "object": "vo://esg/data/public/**"},
        {"action": "write", "object": "vo://esg/data/public/**"},
    ]
    assert listing[BOB] == [{"action": "read", "object": "vo://esg/data/public/**"}]


def test_disjoint_namespace_is_empty_but_signed(world, cas_server):
    body = wire.call(cas_server.endpoint, "query",
                     {"query": "resource_rights", "namespace": "vo://other/**"},
                     chain=chain_doc(world, "alice"))
    statement = statement_from_map(body["statement"])
    assert statement.body["listing"] == {}
    assert verify_statement(statement, world.cas.keys.public())


def test_every_request_is_audited_once(world, cas_server):
    wire.call(cas_server.endpoint, "ping")
    with pytest.raises(ServerError):
        wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
                  chain=chain_doc(world, "carol"))
    wire.call(cas_server.endpoint, "get_credential", {"mode": "assertion"},
              chain=chain_doc(world, "alice"))
    records = audit_lines(cas_server)
    assert len(records) == 3
    assert [r["outcome"] for r in records] == ["ok", "error:NotAMember", "ok"]
    assert records[1]["caller"] == CAROL
    timestamps = [r["timestamp"] for r in records]
    assert timestamps == sorted(timestamps)


def test_concurrent_admin_mutations_serialize(world, cas_server):
    count = 8
    errors = []

    def add(i):
        try:
            wire.call(cas_server.endpoint, "admin", {"command": {
                "op": "add_member", "identity": f"/VO=esg/CN=user{i}",
            }}, chain=chain_doc(world, "owner"))
        except Exception as exc:  # pragma: no cover - diagnostic only
            errors.append(exc)

    threads = [threading.Thread(target=add, args=(i,)) for i in range(count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert wire.call(cas_server.endpoint, "ping")["revision"] == 1 + count
    final = load_database(cas_server.config.db_path)
    assert {f"/VO=esg/CN=user{i}" for i in range(count)} <= final.members


def test_restart_round_trips_database_bytes(world, tmp_path):
    paths = world.write_server_files(tmp_path)
    config = ServerConfig(listen=("127.0.0.1", 0), db_path=paths["db"],
                          credential_path=paths["key"], anchors_path=paths["anchors"])
    server = CasServer(config)
    server.start()
    wire.call(server.endpoint, "admin", {"command": {
        "op": "add_member", "identity": "/VO=esg/CN=dave",
    }}, chain=chain_doc(world, "owner"))
    before = paths["db"].read_bytes()
    server.stop()

    reborn = CasServer(config)
    reborn.start()
    assert db_canonical_bytes(reborn.db) == before
    assert wire.call(reborn.endpoint, "ping")["revision"] == 2
    reborn.stop()
    assert paths["db"].read_bytes() == before


def test_crash_between_write_and_rename_preserves_previous(world, tmp_path, monkeypatch):
    paths = world.write_server_files(tmp_path)
    config = ServerConfig(listen=("127.0.0.1", 0), db_path=paths["db"],
                          credential_path=paths["key"], anchors_path=paths["anchors"])
    server = CasServer(config)
    original = paths["db"].read_bytes()

    def crash(src, dst):
        raise OSError("simulated crash before rename")

    monkeypatch.setattr("caslite.canonical.os.replace", crash)
    with pytest.raises(OSError):
        server.handle_admin(
            {"command": {"op": "add_member", "identity": "/VO=esg/CN=dave"}}, OWNER
        )
    monkeypatch.undo()
    assert paths["db"].read_bytes() == original
    restarted = CasServer(config)
    assert restarted.db.revision == 1  # previous revision intact
