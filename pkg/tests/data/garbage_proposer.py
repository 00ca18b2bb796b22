"""External proposer that always returns unparseable source (error-path tests)."""
import json
import sys

for line in sys.stdin:
    request = json.loads(line)
    sys.stdout.write(
        json.dumps({"text": "this is not a flowchart at all", "modification": "garbage"}) + "\n"
    )
    sys.stdout.flush()
