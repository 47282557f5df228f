#include <stdlib.h>
#include <string.h>

static size_t max_chunk = 4096;

struct buffer {
    char *data;
    size_t len;
    size_t cap;
};

int buffer_grow(struct buffer *b, size_t need)
{
    size_t cap = b->cap ? b->cap : 16;
    while (cap < need)
        cap *= 2;
    char *p = realloc(b->data, cap);
    if (!p)
        return -1;
    b->data = p;
    b->cap = cap;
    return 0;
}

int buffer_append(struct buffer *b, const char *src, size_t n)
{
    if (n > max_chunk)
        return -1;
    if (buffer_grow(b, b->len + n) != 0)
        return -1;
    memcpy(b->data + b->len, src, n);
    b->len += n;
    return 0;
}
