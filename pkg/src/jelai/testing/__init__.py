"""Test doubles shipped with the package: the canned-response LLM stub server."""

from jelai.testing.stub_llm import StubLLMServer

__all__ = ["StubLLMServer"]
