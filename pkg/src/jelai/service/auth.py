"""Bearer-token auth backed by the static tokens file.

Stands in for an external identity layer: each token maps to exactly one
principal (user_id + role).
"""

from __future__ import annotations

from dataclasses import dataclass

from fastapi import HTTPException


@dataclass(frozen=True, slots=True)
class Principal:
    user_id: str
    role: str  # student | instructor

    @property
    def is_instructor(self) -> bool:
        return self.role == "instructor"


def principal_from_header(authorization: str | None, tokens: dict[str, dict[str, str]]) -> Principal:
    if not authorization or not authorization.startswith("Bearer "):
        raise HTTPException(status_code=401, detail="missing bearer token")
    token = authorization[len("Bearer ") :].strip()
    entry = tokens.get(token)
    if entry is None:
        raise HTTPException(status_code=401, detail="unknown token")
    return Principal(user_id=entry["user_id"], role=entry["role"])
