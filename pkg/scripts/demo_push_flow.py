#!/usr/bin/env python3
"""Walk the full push-model journey in one process and narrate each step:
proxy creation, credential issuance at the authority, and enforcement at a
file service, including the denials that make the model interesting.
"""

import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from caslite import wire
from caslite.assertions import assertion_from_map, embed_in_proxy
from caslite.credentials import CredentialChain, chain_from_map, chain_to_map, issue_proxy
from caslite.errors import ServerError
from caslite.server import CasServer, ServerConfig
from caslite.vault import ResourceConfig, ResourceService, VaultServer

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from worldlib import make_world  # noqa: E402


def main() -> int:
    world = make_world()
    tmp = Path(tempfile.mkdtemp(prefix="caslite-demo-"))
    paths = world.write_server_files(tmp)

    authority = CasServer(ServerConfig(
        listen=("127.0.0.1", 0), db_path=paths["db"],
        credential_path=paths["key"], anchors_path=paths["anchors"],
    ))
    authority.start()
    vault = VaultServer(("127.0.0.1", 0), ResourceService(ResourceConfig(
        site=world.site, cas_public=world.cas.keys.public(),
        cas_identity=world.cas.subject, anchors=world.anchors,
    )))
    vault.start()
    print(f"authority up at {wire.format_endpoint(authority.endpoint)}, "
          f"vault at {wire.format_endpoint(vault.endpoint)}")

    now = int(time.time())
    print("\n[1] alice creates a local proxy from her long-term credential")
    alice_proxy = issue_proxy(CredentialChain(eec=world.eec("alice")), (now, now + 43200))
    print(f"    proxy subject {alice_proxy.subject}, 1 delegation link")

    print("\n[2] alice authenticates to the authority and receives a signed assertion")
    body = wire.call(authority.endpoint, "get_credential", {"mode": "assertion"},
                     chain=chain_to_map(alice_proxy))
    assertion = assertion_from_map(body["assertion"])
    print(f"    assertion for {assertion.subject}, rights:")
    for right in sorted(assertion.rights):
        print(f"      {right.action:6s} {right.object}")
    community_chain = embed_in_proxy(alice_proxy, assertion)
    print("    embedded into a new proxy link; the chain still authenticates as alice")

    print("\n[3] alice uses the combined credential at the file service")
    doc = chain_to_map(community_chain)
    wire.call(vault.endpoint, "write",
              {"path": "vo://esg/data/public/demo.nc", "data": b"demo bytes".hex()},
              chain=doc)
    read_back = wire.call(vault.endpoint, "read",
                          {"path": "vo://esg/data/public/demo.nc"}, chain=doc)
    print(f"    wrote and read back {bytes.fromhex(read_back['data'])!r}")

    print("\n[4] the same pipeline denies what policy does not grant")
    bob_proxy = issue_proxy(CredentialChain(eec=world.eec("bob")), (now, now + 43200))
    body = wire.call(authority.endpoint, "get_credential", {"mode": "assertion"},
                     chain=chain_to_map(bob_proxy))
    bob_chain = embed_in_proxy(bob_proxy, assertion_from_map(body["assertion"]))
    try:
        wire.call(vault.endpoint, "write",
                  {"path": "vo://esg/data/public/demo.nc", "data": "00"},
                  chain=chain_to_map(bob_chain))
    except ServerError as exc:
        print(f"    bob write -> {exc.code}: {exc.message}")
    try:
        wire.call(authority.endpoint, "get_credential", {"mode": "assertion"},
                  chain=chain_to_map(issue_proxy(
                      CredentialChain(eec=world.eec("carol")), (now, now + 43200))))
    except ServerError as exc:
        print(f"    carol get-credential -> {exc.code}: {exc.message}")

    print("\n[5] the restricted-chain model hides the user behind the community")
    body = wire.call(authority.endpoint, "get_credential",
                     {"mode": "restricted_proxy", "lifetime": 3600},
                     chain=chain_to_map(alice_proxy))
    restricted = chain_from_map(body["chain"])
    print(f"    chain subject is {restricted.subject}; the resource never sees alice")
    decision = vault.service.authorize(restricted, "read",
                                       "vo://esg/data/public/demo.nc", int(time.time()))
    print(f"    read under the restricted chain -> allow={decision.allow}")

    vault.stop()
    authority.stop()
    print("\ndone")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
