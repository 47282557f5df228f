package server

import (
	"net/http"
	"strings"
)

var allowedOrigins = []string{"https://example.org"}

type Handler struct {
	prefix string
}

func (h *Handler) ServeHTTP(w http.ResponseWriter, r *http.Request) {
	if !strings.HasPrefix(r.URL.Path, h.prefix) {
		http.NotFound(w, r)
		return
	}
	check := func(origin string) bool {
		for _, o := range allowedOrigins {
			if o == origin {
				return true
			}
		}
		return false
	}
	if !check(r.Header.Get("Origin")) {
		w.WriteHeader(http.StatusForbidden)
	}
}

func NewHandler(prefix string) *Handler {
	return &Handler{prefix: prefix}
}
