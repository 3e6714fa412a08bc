"""Shared HTTP plumbing for the remote retriever and the remote LLM backend:
JSON POST with bounded exponential-backoff retries."""

from __future__ import annotations

import time

import requests


class NetworkError(RuntimeError):
    """Transport failure or server-side error; retried up to the attempt
    budget before surfacing."""


class ProtocolError(RuntimeError):
    """The remote endpoint answered, but not in the agreed wire format.
    Never retried."""


def post_json(
    url: str,
    payload: dict,
    *,
    headers: dict | None = None,
    timeout: float = 60.0,
    max_attempts: int = 3,
    backoff_base: float = 0.5,
) -> dict:
    """POST a JSON payload and return the decoded JSON response.

    Connection failures, timeouts, and 5xx responses count as NetworkError
    and are retried with exponential backoff (capped at 8s); 4xx responses
    and undecodable bodies raise ProtocolError immediately.
    """
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
        else:
            if response.status_code >= 500:
                last_error = NetworkError(f"server error {response.status_code} from {url}")
            elif response.status_code >= 400:
                raise ProtocolError(f"HTTP {response.status_code} from {url}")
            else:
                try:
                    return response.json()
                except ValueError as exc:
                    raise ProtocolError(f"non-JSON response from {url}") from exc
        if attempt < max_attempts - 1:
            time.sleep(min(backoff_base * (2**attempt), 8.0))
    raise NetworkError(f"POST {url} failed after {max_attempts} attempts") from last_error
