#include <algorithm>
#include <vector>

namespace linalg {

class Matrix {
public:
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    double at(int r, int c) const
    {
        return data_[r * cols_ + c];
    }

    void scale(double k)
    {
        std::for_each(data_.begin(), data_.end(), [k](double &v) {
            v *= k;
        });
    }

private:
    int rows_;
    int cols_;
    std::vector<double> data_;
};

int checked_index(int r, int c, int cols)
{
    auto valid = [](int x) { return x >= 0; };
    if (!valid(r) || !valid(c))
        return -1;
    return r * cols + c;
}

}  // namespace linalg
