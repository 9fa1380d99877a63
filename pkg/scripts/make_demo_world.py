#!/usr/bin/env python3
"""Bootstrap a demo deployment under ./demo: a test CA, user credentials,
the community policy database, a site policy, and trust anchors.

Run once, then follow the README walkthrough with the caslite-* tools.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from caslite.credentials import CredentialChain, issue_eec, make_ca, save_chain
from caslite.policy import (
    AdminCapability,
    Group,
    Right,
    SitePolicy,
    VOPolicyDatabase,
    save_database,
    save_site,
)

USERS = ["alice", "bob", "carol", "admin-ann", "owner"]


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo")
    out.mkdir(parents=True, exist_ok=True)
    now = int(time.time())
    year = (now - 3600, now + 365 * 86400)

    ca = make_ca("testca", now=now - 86400)
    save_chain(CredentialChain(eec=ca), out / "ca.chain")
    save_chain(CredentialChain(eec=ca), out / "anchors.chain", include_private=False)

    for name in USERS:
        eec = issue_eec(ca, f"/VO=esg/CN={name}", year)
        save_chain(CredentialChain(eec=eec), out / f"{name}.eec")
    cas = issue_eec(ca, "/VO=esg/CN=cas", year)
    save_chain(CredentialChain(eec=cas), out / "cas.chain")
    save_chain(CredentialChain(eec=cas), out / "cas_public.chain", include_private=False)

    db = VOPolicyDatabase(
        vo_name="esg",
        owner="/VO=esg/CN=owner",
        members=frozenset({f"/VO=esg/CN={n}" for n in ("alice", "bob", "admin-ann")}),
        groups={"publishers": Group("publishers", frozenset({"/VO=esg/CN=alice"}))},
        grants={
            "publishers": frozenset({
                Right("read", "vo://esg/data/**"), Right("write", "vo://esg/data/**"),
            }),
            "/VO=esg/CN=bob": frozenset({Right("read", "vo://esg/data/public/**")}),
        },
        admin_caps=(
            AdminCapability("/VO=esg/CN=admin-ann", frozenset({"grant", "revoke"}),
                            "vo://esg/data/public/**"),
        ),
        revision=1,
    )
    save_database(db, out / "db.json")

    site = SitePolicy(
        vo_accounts={"/VO=esg/CN=cas": "esg"},
        site_rights={"esg": frozenset({
            Right("read", "vo://esg/data/**"),
            Right("write", "vo://esg/data/**"),
            Right("list", "vo://esg/data/**"),
        })},
        blacklist=frozenset({"/VO=esg/CN=carol"}),
    )
    save_site(site, out / "site.json")

    (out / "subscriptions.json").write_text(
        '[{"query": "resource_rights", "namespace": "vo://esg/**"}]\n'
    )
    print(f"demo world written to {out}/")
    print("  community: esg (members alice, bob, admin-ann; carol blacklisted)")
    print("  next: caslite-server --listen 127.0.0.1:7740 "
          f"--db {out}/db.json --key {out}/cas.chain --anchors {out}/anchors.chain")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
