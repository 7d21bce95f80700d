"""Cloud storage access control and auditing toolkit.

Modules: ``keyforge`` (time-bound login keys), ``cryptbox`` (RSA and payload
keystream), ``protocol`` (client, CSP and controller), ``ledger`` (hash-chained
log), ``integrity`` (checksum audits), ``sentinel`` (auditor monitoring and a
login-log forest), ``netsim`` (deterministic simulator) and ``cli``.
"""

__version__ = "0.1.0"
