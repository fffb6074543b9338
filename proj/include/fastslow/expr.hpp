#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <utility>

#include "fastslow/errors.hpp"

namespace fastslow::expr {

// Small differentiable expression language over (x, theta).  The grammar is
// closed under d/dx and d/dtheta, which is what makes user-supplied systems
// usable by the cone/shadowing machinery without numerical differentiation.

enum class Kind { Num, VarX, VarTheta, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    Kind kind;
    double value = 0.0;  // Num
    int exponent = 0;    // Pow
    NodePtr a, b;
};

inline NodePtr make_num(double v) {
    return std::make_shared<Node>(Node{Kind::Num, v, 0, nullptr, nullptr});
}
inline NodePtr make_var_x() { return std::make_shared<Node>(Node{Kind::VarX, 0, 0, nullptr, nullptr}); }
inline NodePtr make_var_theta() {
    return std::make_shared<Node>(Node{Kind::VarTheta, 0, 0, nullptr, nullptr});
}
inline NodePtr make_unary(Kind k, NodePtr a) {
    return std::make_shared<Node>(Node{k, 0, 0, std::move(a), nullptr});
}
inline NodePtr make_binary(Kind k, NodePtr a, NodePtr b) {
    return std::make_shared<Node>(Node{k, 0, 0, std::move(a), std::move(b)});
}
inline NodePtr make_pow(NodePtr a, int k) {
    return std::make_shared<Node>(Node{Kind::Pow, 0, k, std::move(a), nullptr});
}

inline bool is_num(const NodePtr& n, double v) { return n->kind == Kind::Num && n->value == v; }

// light constant folding; keeps derivatives readable and bounded in size
inline NodePtr add(NodePtr a, NodePtr b) {
    if (is_num(a, 0)) return b;
    if (is_num(b, 0)) return a;
    if (a->kind == Kind::Num && b->kind == Kind::Num) return make_num(a->value + b->value);
    return make_binary(Kind::Add, std::move(a), std::move(b));
}
inline NodePtr sub(NodePtr a, NodePtr b) {
    if (is_num(b, 0)) return a;
    if (a->kind == Kind::Num && b->kind == Kind::Num) return make_num(a->value - b->value);
    if (is_num(a, 0)) return make_unary(Kind::Neg, std::move(b));
    return make_binary(Kind::Sub, std::move(a), std::move(b));
}
inline NodePtr mul(NodePtr a, NodePtr b) {
    if (is_num(a, 0) || is_num(b, 0)) return make_num(0);
    if (is_num(a, 1)) return b;
    if (is_num(b, 1)) return a;
    if (a->kind == Kind::Num && b->kind == Kind::Num) return make_num(a->value * b->value);
    return make_binary(Kind::Mul, std::move(a), std::move(b));
}
inline NodePtr div(NodePtr a, NodePtr b) {
    if (is_num(a, 0)) return make_num(0);
    if (is_num(b, 1)) return a;
    return make_binary(Kind::Div, std::move(a), std::move(b));
}

inline double eval(const Node& n, double x, double theta) {
    switch (n.kind) {
        case Kind::Num: return n.value;
        case Kind::VarX: return x;
        case Kind::VarTheta: return theta;
        case Kind::Add: return eval(*n.a, x, theta) + eval(*n.b, x, theta);
        case Kind::Sub: return eval(*n.a, x, theta) - eval(*n.b, x, theta);
        case Kind::Mul: return eval(*n.a, x, theta) * eval(*n.b, x, theta);
        case Kind::Div: {
            const double d = eval(*n.b, x, theta);
            if (std::fabs(d) < 1e-300)
                throw numeric_domain_error("division by value below 1e-300");
            return eval(*n.a, x, theta) / d;
        }
        case Kind::Pow: {
            const double base = eval(*n.a, x, theta);
            double r = 1.0;
            int k = n.exponent >= 0 ? n.exponent : -n.exponent;
            double p = base;
            for (; k > 0; k >>= 1, p *= p)
                if (k & 1) r *= p;
            if (n.exponent < 0) {
                if (std::fabs(r) < 1e-300)
                    throw numeric_domain_error("negative power of value below 1e-300");
                return 1.0 / r;
            }
            return r;
        }
        case Kind::Neg: return -eval(*n.a, x, theta);
        case Kind::Sin: return std::sin(eval(*n.a, x, theta));
        case Kind::Cos: return std::cos(eval(*n.a, x, theta));
        case Kind::Exp: return std::exp(eval(*n.a, x, theta));
    }
    return 0.0;
}

enum class Var { X, Theta };

inline NodePtr differentiate(const NodePtr& n, Var v) {
    switch (n->kind) {
        case Kind::Num: return make_num(0);
        case Kind::VarX: return make_num(v == Var::X ? 1 : 0);
        case Kind::VarTheta: return make_num(v == Var::Theta ? 1 : 0);
        case Kind::Add: return add(differentiate(n->a, v), differentiate(n->b, v));
        case Kind::Sub: return sub(differentiate(n->a, v), differentiate(n->b, v));
        case Kind::Mul:
            return add(mul(differentiate(n->a, v), n->b), mul(n->a, differentiate(n->b, v)));
        case Kind::Div:
            return div(sub(mul(differentiate(n->a, v), n->b), mul(n->a, differentiate(n->b, v))),
                       make_pow(n->b, 2));
        case Kind::Pow:
            if (n->exponent == 0) return make_num(0);
            return mul(mul(make_num(n->exponent), make_pow(n->a, n->exponent - 1)),
                       differentiate(n->a, v));
        case Kind::Neg: return make_unary(Kind::Neg, differentiate(n->a, v));
        case Kind::Sin: return mul(make_unary(Kind::Cos, n->a), differentiate(n->a, v));
        case Kind::Cos:
            return make_unary(Kind::Neg, mul(make_unary(Kind::Sin, n->a), differentiate(n->a, v)));
        case Kind::Exp: return mul(make_unary(Kind::Exp, n->a), differentiate(n->a, v));
    }
    return make_num(0);
}

inline bool equal(const NodePtr& a, const NodePtr& b) {
    if (a->kind != b->kind) return false;
    switch (a->kind) {
        case Kind::Num: return a->value == b->value;
        case Kind::VarX:
        case Kind::VarTheta: return true;
        case Kind::Pow: return a->exponent == b->exponent && equal(a->a, b->a);
        case Kind::Neg:
        case Kind::Sin:
        case Kind::Cos:
        case Kind::Exp: return equal(a->a, b->a);
        default: return equal(a->a, b->a) && equal(a->b, b->b);
    }
}

// Fully parenthesized form: parse(print(t)) rebuilds t node for node.
inline std::string print(const NodePtr& n) {
    char buf[40];
    switch (n->kind) {
        case Kind::Num:
            std::snprintf(buf, sizeof buf, "%.17g", n->value);
            return buf;
        case Kind::VarX: return "x";
        case Kind::VarTheta: return "theta";
        case Kind::Add: return "(" + print(n->a) + "+" + print(n->b) + ")";
        case Kind::Sub: return "(" + print(n->a) + "-" + print(n->b) + ")";
        case Kind::Mul: return "(" + print(n->a) + "*" + print(n->b) + ")";
        case Kind::Div: return "(" + print(n->a) + "/" + print(n->b) + ")";
        case Kind::Pow:
            std::snprintf(buf, sizeof buf, "%d", n->exponent);
            return "(" + print(n->a) + "^" + buf + ")";
        case Kind::Neg: return "(-" + print(n->a) + ")";
        case Kind::Sin: return "sin(" + print(n->a) + ")";
        case Kind::Cos: return "cos(" + print(n->a) + ")";
        case Kind::Exp: return "exp(" + print(n->a) + ")";
    }
    return "";
}

struct parse_error : config_error {
    parse_error(std::size_t off, const std::string& expected)
        : config_error("syntax error at offset " + std::to_string(off) + ", expected " + expected),
          offset(off),
          expected_tokens(expected) {}
    std::size_t offset;
    std::string expected_tokens;
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    NodePtr parse() {
        NodePtr e = expression();
        skip_ws();
        if (pos_ != s_.size()) throw parse_error(pos_, "end of input or operator");
        return e;
    }

private:
    NodePtr expression() {
        NodePtr lhs = term();
        for (;;) {
            skip_ws();
            if (accept('+'))
                lhs = make_binary(Kind::Add, lhs, term());
            else if (accept('-'))
                lhs = make_binary(Kind::Sub, lhs, term());
            else
                return lhs;
        }
    }

    NodePtr term() {
        NodePtr lhs = unary();
        for (;;) {
            skip_ws();
            if (accept('*'))
                lhs = make_binary(Kind::Mul, lhs, unary());
            else if (accept('/'))
                lhs = make_binary(Kind::Div, lhs, unary());
            else
                return lhs;
        }
    }

    NodePtr unary() {
        skip_ws();
        if (accept('-')) return make_unary(Kind::Neg, unary());
        return power();
    }

    NodePtr power() {
        NodePtr base = atom();
        skip_ws();
        if (accept('^')) {
            skip_ws();
            bool neg = accept('-');
            skip_ws();
            const std::size_t start = pos_;
            long k = 0;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                k = k * 10 + (s_[pos_] - '0');
                ++pos_;
            }
            if (pos_ == start) throw parse_error(pos_, "integer exponent");
            return make_pow(base, static_cast<int>(neg ? -k : k));
        }
        return base;
    }

    NodePtr atom() {
        skip_ws();
        if (pos_ >= s_.size()) throw parse_error(pos_, "number, identifier or \"(\"");
        const char c = s_[pos_];
        if (accept('(')) {
            NodePtr e = expression();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
        throw parse_error(pos_, "number, identifier or \"(\"");
    }

    NodePtr number() {
        const char* begin = s_.data() + pos_;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) throw parse_error(pos_, "number");
        pos_ += static_cast<std::size_t>(end - begin);
        return make_num(v);
    }

    NodePtr identifier() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        const std::string_view name = s_.substr(start, pos_ - start);
        if (name == "x") return make_var_x();
        if (name == "theta") return make_var_theta();
        if (name == "pi") return make_num(3.14159265358979323846264338327950288);
        if (name == "sin" || name == "cos" || name == "exp") {
            skip_ws();
            expect('(');
            NodePtr arg = expression();
            expect(')');
            if (name == "sin") return make_unary(Kind::Sin, arg);
            if (name == "cos") return make_unary(Kind::Cos, arg);
            return make_unary(Kind::Exp, arg);
        }
        throw parse_error(start, "one of x, theta, pi, sin, cos, exp");
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        skip_ws();
        if (!accept(c)) throw parse_error(pos_, std::string("\"") + c + "\"");
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline NodePtr parse_expression(std::string_view text) {
    if (text.size() > 4096) throw config_error("expression longer than 4096 characters");
    return detail::Parser(text).parse();
}

}  // namespace fastslow::expr
