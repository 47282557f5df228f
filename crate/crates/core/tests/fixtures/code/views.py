import hmac
import json

SECRET = b"change-me"


def verify(payload, signature):
    expected = hmac.new(SECRET, payload, "sha256").hexdigest()
    return hmac.compare_digest(expected, signature)


class Webhook:
    def __init__(self, handlers):
        self.handlers = handlers

    def dispatch(self, request):
        def decode(body):
            data = json.loads(body)
            return data.get("event"), data

        if not verify(request.body, request.headers["X-Signature"]):
            return 403
        event, data = decode(request.body)
        return self.handlers[event](data)
